#pragma once

// Umbrella header: pulls in the whole library.

#include "retnas/archspace.hpp"
#include "retnas/autograd.hpp"
#include "retnas/checkpoint.hpp"
#include "retnas/common.hpp"
#include "retnas/config.hpp"
#include "retnas/dataset.hpp"
#include "retnas/nn.hpp"
#include "retnas/objectives.hpp"
#include "retnas/ops.hpp"
#include "retnas/optim.hpp"
#include "retnas/partaware.hpp"
#include "retnas/png_io.hpp"
#include "retnas/retrieval.hpp"
#include "retnas/rng.hpp"
#include "retnas/searcher.hpp"
#include "retnas/supernet.hpp"
#include "retnas/tensor.hpp"
#include "retnas/trainer.hpp"
