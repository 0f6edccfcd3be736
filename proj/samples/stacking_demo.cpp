// Pooling n noisy copies of a feature shrinks the spread by sqrt(n).
#include <cstdio>

#include "s2s2/stacklab.hpp"

int main() {
  using namespace s2s2;
  const std::size_t ns[] = {1, 2, 4, 8, 16, 32};
  const Rng rng(7, Stream::verify);
  std::printf("%4s %12s %12s %8s\n", "n", "empirical", "sigma/sqrt(n)", "ratio");
  for (const auto& row : stacklab::stacking_law_mc(0.5, ns, 4000, rng)) {
    std::printf("%4zu %12.5f %12.5f %8.4f\n", row.n, row.empirical_std, row.predicted_std, row.ratio);
  }

  // Posterior over a 2-d feature after three observations.
  stacklab::GaussianPrior prior{{0.0, 0.0}, 1.0, 0.5};
  const std::vector<stacklab::Array> obs{{1.0, 2.0}, {1.2, 1.8}, {0.9, 2.1}};
  const auto post = stacklab::bayes_update(prior, obs);
  std::printf("posterior mean (%.4f, %.4f), variance %.4f\n", post.mean[0], post.mean[1], post.variance);
}
