#include <chrono>
#include <cstdio>

#include "pmt/core/random.hpp"
#include "pmt/gradcore/kernels.hpp"
#include "pmt/gradcore/ops.hpp"
#include "pmt/segnet/segnet.hpp"

int main(int argc, char** argv) {
  using namespace pmt;
  if (argc > 1) kernels::set_backend(kernels::Backend::kScalar);
  segnet::SegNetConfig cfg;
  auto params = segnet::init_params<float>(cfg, 1);
  Rng rng(3);
  std::vector<float> xv(4 * 64 * 64);
  for (auto& v : xv) v = static_cast<float>(normal01(rng));
  Tensor x({4, 1, 64, 64}, xv);
  auto t0 = std::chrono::steady_clock::now();
  const int iters = 20;
  for (int i = 0; i < iters; ++i) {
    Tensor y = segnet::forward(cfg, params, x);
    Tensor loss = mean(y);
    loss.backward();
  }
  auto t1 = std::chrono::steady_clock::now();
  for (int i = 0; i < iters; ++i) {
    NoGradGuard g;
    Tensor y = segnet::forward(cfg, params, x);
  }
  auto t2 = std::chrono::steady_clock::now();
  std::printf("backend=%s params=%zu fwd+bwd(4) %.2f ms  fwd(4) %.2f ms\n",
              std::string(kernels::backend_name(kernels::current_backend())).c_str(),
              segnet::parameter_count(cfg),
              std::chrono::duration<double, std::milli>(t1 - t0).count() / iters,
              std::chrono::duration<double, std::milli>(t2 - t1).count() / iters);
}
