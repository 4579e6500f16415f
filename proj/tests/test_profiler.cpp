#include <gtest/gtest.h>

#include <filesystem>

#include "dhi/profiler.hpp"

using namespace dhi;

TEST(ConvFlops, HandValues) {
  EXPECT_EQ(conv_flops(10, 10, 1, 1, 1), 200u);
  // 3x3, 3 -> 8 channels at 32x32: 2 * 32 * 32 * 8 * 3 * 9
  EXPECT_EQ(conv_flops(32, 32, 8, 3, 3), 442368u);
  // 5x5, 16 -> 4 at 7x9
  EXPECT_EQ(conv_flops(7, 9, 4, 16, 5), 201600u);
  EXPECT_EQ(conv_flops(20, 20, 8, 3, 3), 4 * conv_flops(10, 10, 8, 3, 3));
}

TEST(ConvFlops, LayerProfileOfStridedConv) {
  Conv2dLayer conv(3, 8, 3, 2, Padding::Same, false);
  auto l = profile_conv("c", conv, 15, 16);
  EXPECT_EQ(l.output, (Shape{8, 8, 8}));
  EXPECT_EQ(l.params, 216u);
  EXPECT_EQ(l.flops, 2u * 8 * 8 * 8 * 3 * 9);
}

TEST(ModelProfile, EmptyIsZero) {
  ModelProfile p;
  EXPECT_EQ(p.total_params(), 0u);
  EXPECT_EQ(p.total_flops(), 0u);
}

TEST(ModelProfile, ParamsMatchOptimizerScalars) {
  ModelConfig c;
  c.input_size = 64;
  c.backbone_channels.assign(13, 6);
  Detector d(c, default_anchors(5));
  auto p = profile_model(d);
  EXPECT_EQ(p.total_params(), d.params().trainable_count());
  Adam adam(d.params().trainable(), AdamOptions{});
  EXPECT_EQ(p.total_params(), adam.parameter_scalars());
}

TEST(ModelProfile, TotalsAreAdditiveAndWeightingIsFree) {
  Detector d(ModelConfig{}, default_anchors(5));
  auto p = profile_model(d);
  std::uint64_t f = 0;
  std::size_t n = 0;
  bool saw_weighting = false;
  for (const auto& l : p.layers) {
    f += l.flops;
    n += l.params;
    if (l.name == "rgb.depth_weighting") {
      saw_weighting = true;
      EXPECT_EQ(l.params, 0u);
      EXPECT_GT(l.flops, 0u);
    }
  }
  EXPECT_TRUE(saw_weighting);
  EXPECT_EQ(f, p.total_flops());
  EXPECT_EQ(n, p.total_params());
  EXPECT_EQ(p.layers.back().output, (Shape{13, 13, 40}));
  // reported next to the published figure, only sanity-bounded here
  EXPECT_GT(p.gflops(), 1.0);
  EXPECT_LT(p.gflops(), 100.0);
}

TEST(Comparison, ConvolutionAndHyperRows) {
  auto t = parameter_comparison({OperatorKind::Convolution, OperatorKind::Involution,
                                 OperatorKind::DepthAwareHyperInvolution},
                                {3, 5, 7});
  const ComparisonRow* conv = nullptr;
  const ComparisonRow* hyper = nullptr;
  const ComparisonRow* inv_stored = nullptr;
  for (const auto& r : t.rows) {
    if (r.operator_name == to_string(OperatorKind::Convolution) && r.count == "trainable") conv = &r;
    if (r.operator_name == to_string(OperatorKind::DepthAwareHyperInvolution) && r.count == "trainable") hyper = &r;
    if (r.operator_name == to_string(OperatorKind::Involution) && r.count == "stored") inv_stored = &r;
  }
  ASSERT_TRUE(conv && hyper && inv_stored);
  EXPECT_EQ(conv->values, (std::vector<std::size_t>{216, 600, 1176}));
  EXPECT_EQ(inv_stored->values, (std::vector<std::size_t>{145, 289, 505}));
  EXPECT_EQ(hyper->values[0], hyper->values[1]);
  EXPECT_EQ(hyper->values[1], hyper->values[2]);
}

TEST(Comparison, CsvRoundTrip) {
  auto t = parameter_comparison({OperatorKind::Convolution, OperatorKind::Involution, OperatorKind::HyperInvolution,
                                 OperatorKind::DepthAwareHyperInvolution},
                                {1, 3, 5, 7, 9});
  auto path = std::filesystem::temp_directory_path() / "dhi_test_cmp.csv";
  write_comparison_csv(path, t);
  auto back = read_comparison_csv(path);
  EXPECT_EQ(back.kernel_sizes, t.kernel_sizes);
  ASSERT_EQ(back.rows.size(), t.rows.size());
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    EXPECT_EQ(back.rows[i].operator_name, t.rows[i].operator_name);
    EXPECT_EQ(back.rows[i].count, t.rows[i].count);
    EXPECT_EQ(back.rows[i].values, t.rows[i].values);
  }
  std::filesystem::remove(path);
  EXPECT_FALSE(format_comparison(t).empty());
}
