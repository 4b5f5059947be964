// Prints the cost table for a hand-written genotype next to the ResNet-18
// reference, at the full-scale macro (C=64, four stages of two cells,
// 384x128 inputs, 751-way classifier).

#include <cstdio>

#include "retnas/retnas.hpp"

using namespace retnas;

int main() {
  Genotype g;
  g.space = OpSpace::kReid;
  g.B = 4;
  g.normal = {{0, 1, OpKind::kSepConv3x3, OpKind::kIdentity},
              {0, 2, OpKind::kPartAware, OpKind::kSepConv3x3},
              {1, 3, OpKind::kDilConv3x3, OpKind::kMaxPool3x3},
              {2, 4, OpKind::kSepConv3x3, OpKind::kIdentity}};
  g.reduction = {{0, 1, OpKind::kMaxPool3x3, OpKind::kSepConv3x3},
                 {1, 2, OpKind::kSepConv3x3, OpKind::kIdentity},
                 {0, 3, OpKind::kDilConv3x3, OpKind::kAvgPool3x3},
                 {1, 4, OpKind::kMaxPool3x3, OpKind::kIdentity}};

  MacroConfig m;
  m.C = 64;

  std::printf("%s\n\n", genotype_to_json(g).c_str());

  const CostReport r = count_params_flops(g, m);
  std::printf("%-28s %14s %16s\n", "layer", "params", "macs");
  for (const CostRow& row : r.rows)
    std::printf("%-28s %14lld %16lld\n", row.name.c_str(),
                static_cast<long long>(row.params),
                static_cast<long long>(row.macs));
  std::printf("%-28s %14lld %16lld\n", "total",
              static_cast<long long>(r.params),
              static_cast<long long>(r.macs));

  const CostReport rn = resnet18_reference_cost(m.in_h, m.in_w, m.num_ids);
  std::printf("\nresnet18 reference: %lld params, %lld macs\n",
              static_cast<long long>(rn.params),
              static_cast<long long>(rn.macs));
  return 0;
}
