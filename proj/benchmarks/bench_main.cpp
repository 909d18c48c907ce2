#include <benchmark/benchmark.h>

#include <vector>

#include "reid/ops.hpp"
#include "reid/res2net.hpp"
#include "reid/retrieval.hpp"
#include "reid/rng.hpp"

namespace {

using reid::BackboneConfig;
using reid::ConvParams;
using reid::GalleryIndex;
using reid::Mode;
using reid::Model;
using reid::Rng;
using reid::Tensor;

ConvParams<float> random_conv(int out_c, int in_c, int k, int stride,
                              int padding, Rng& rng) {
  ConvParams<float> p;
  p.weight = Tensor<float>({static_cast<std::size_t>(out_c),
                            static_cast<std::size_t>(in_c),
                            static_cast<std::size_t>(k),
                            static_cast<std::size_t>(k)});
  p.bias = Tensor<float>({static_cast<std::size_t>(out_c)});
  p.stride = stride;
  p.padding = padding;
  for (auto& v : p.weight.values()) v = static_cast<float>(rng.gaussian());
  for (auto& v : p.bias.values()) v = static_cast<float>(rng.gaussian());
  return p;
}

Tensor<float> random_image(std::size_t c, std::size_t h, std::size_t w,
                           Rng& rng) {
  Tensor<float> x({1, c, h, w});
  for (auto& v : x.values()) v = static_cast<float>(rng.uniform());
  return x;
}

void bm_conv2d_im2col(benchmark::State& state) {
  Rng rng(1);
  const ConvParams<float> p = random_conv(16, 16, 3, 1, 1, rng);
  const Tensor<float> x = random_image(16, 64, 32, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(reid::conv2d(x, p));
  }
}
BENCHMARK(bm_conv2d_im2col);

void bm_conv2d_direct(benchmark::State& state) {
  Rng rng(1);
  const ConvParams<float> p = random_conv(16, 16, 3, 1, 1, rng);
  const Tensor<float> x = random_image(16, 64, 32, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(reid::conv2d_direct(x, p));
  }
}
BENCHMARK(bm_conv2d_direct);

void bm_res2net_block_infer(benchmark::State& state) {
  const int scale = static_cast<int>(state.range(0));
  Rng rng(2);
  reid::Res2NetBlockParams<float> p =
      reid::make_block<float>(16, 16, scale, 1);
  auto fill = [&rng](reid::ConvBn<float>& cb) {
    for (auto& v : cb.conv.weight.values()) {
      v = static_cast<float>(0.1 * rng.gaussian());
    }
    for (auto& v : cb.bn.gamma.values()) v = 1.0f;
  };
  fill(p.reduce);
  if (p.first) fill(*p.first);
  for (auto& g : p.group) fill(g);
  fill(p.expand);
  if (p.proj) fill(*p.proj);
  const Tensor<float> x = random_image(16, 32, 16, rng);
  Tensor<float> in = x;
  for (auto _ : state) {
    benchmark::DoNotOptimize(reid::res2net_block(in, p, Mode::kInfer));
  }
}
BENCHMARK(bm_res2net_block_infer)->Arg(1)->Arg(2)->Arg(4)->Arg(8);

void bm_extract_descriptor(benchmark::State& state) {
  Rng rng(3);
  const Model<float> m = reid::build_backbone<float>(BackboneConfig{}, rng);
  const Tensor<float> img = [] {
    Rng r(4);
    Tensor<float> t({3, 64, 32});
    for (auto& v : t.values()) v = static_cast<float>(r.uniform());
    return t;
  }();
  for (auto _ : state) {
    benchmark::DoNotOptimize(reid::extract_descriptor(m, img));
  }
}
BENCHMARK(bm_extract_descriptor);

void bm_rank_query(benchmark::State& state) {
  const std::size_t G = static_cast<std::size_t>(state.range(0));
  Rng rng(5);
  std::vector<Tensor<float>> rows;
  std::vector<int> ids, cams;
  for (std::size_t i = 0; i < G; ++i) {
    Tensor<float> t({128});
    for (auto& v : t.values()) v = static_cast<float>(rng.gaussian());
    rows.push_back(t);
    ids.push_back(static_cast<int>(i % 100));
    cams.push_back(static_cast<int>(i % 6) + 1);
  }
  const GalleryIndex gallery = reid::make_gallery(rows, ids, cams);
  Tensor<float> q({128});
  for (auto& v : q.values()) v = static_cast<float>(rng.gaussian());
  for (auto _ : state) {
    benchmark::DoNotOptimize(reid::rank_query(q, gallery));
  }
}
BENCHMARK(bm_rank_query)->Arg(1000)->Arg(10000);

}  // namespace

BENCHMARK_MAIN();
