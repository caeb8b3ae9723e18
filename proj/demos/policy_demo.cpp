// Greedy versus coordinate-descent trees on a checkerboard reward pattern,
// where no single split helps but a depth-2 tree is perfect.
#include <iostream>

#include "optpolicy/cli.hpp"
#include "optpolicy/optpolicy.hpp"

using namespace optpolicy;

int main() {
  const std::size_t n = 400;
  Rng rng(7);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  MatrixD x(n, 2);
  MatrixD gamma(n, 2);
  for (std::size_t i = 0; i < n; ++i) {
    x(i, 0) = u(rng);
    x(i, 1) = u(rng);
    const bool same = (x(i, 0) < 0) == (x(i, 1) < 0);
    gamma(i, 0) = same ? 0.0 : 1.0;
    gamma(i, 1) = same ? 1.0 : 0.0;
  }
  RewardMatrix rewards(gamma, {"A", "B"});

  Hyperparameters hp;
  hp.max_depth = 2;
  hp.restarts = 20;
  PolicyTree greedy = fit_greedy(rewards, x, hp);
  PolicyTree optimal = fit_optimal(rewards, x, hp);

  std::cout << "greedy objective " << greedy.objective_train << "\n" << cli::render_tree(greedy);
  std::cout << "optimal objective " << optimal.objective_train << "\n" << cli::render_tree(optimal);
}
