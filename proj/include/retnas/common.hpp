#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace retnas {

template <typename... Args>
std::string cat(Args&&... args) {
  std::ostringstream os;
  (os << ... << args);
  return os.str();
}

// Contract violations surface as std::invalid_argument.
#define RETNAS_CHECK(cond, ...)                                        \
  do {                                                                 \
    if (!(cond)) throw std::invalid_argument(::retnas::cat(__VA_ARGS__)); \
  } while (0)

// Malformed external input (files, documents).
class ParseError : public std::runtime_error {
 public:
  ParseError(std::string path, const std::string& what)
      : std::runtime_error("parse error at " + path + ": " + what),
        path_(std::move(path)) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

}  // namespace retnas
