#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "synct/lattice.hpp"

using namespace synct;

namespace {

// M=2, U=1: two paths, .3·.5·.7 + .6·.2·.7 = 0.189.
LatticeProbs<double> two_by_one() {
  LatticeProbs<double> p(2, 1);
  p.blank_at(0, 0) = std::log(0.6);
  p.label_at(0, 0) = std::log(0.3);
  p.blank_at(0, 1) = std::log(0.5);
  p.label_at(1, 0) = std::log(0.2);
  p.blank_at(1, 1) = std::log(0.7);
  p.blank_at(1, 0) = std::log(0.1);  // unused by any complete path
  return p;
}

}  // namespace

TEST(ForwardPass, Examples) {
  LatticeProbs<double> single(1, 0);
  single.blank_at(0, 0) = std::log(0.7);
  EXPECT_NEAR(forward_pass(single).log_prob, std::log(0.7), 1e-15);
  EXPECT_NEAR(std::exp(forward_pass(two_by_one()).log_prob), 0.189, 1e-15);
}

TEST(ForwardPass, MatchesExplicitPathSum) {
  std::mt19937_64 rng(20);
  for (int i = 0; i < 50; ++i) {
    auto p = oracle::random_lattice<double>(4, 4, rng);
    const double want = static_cast<double>(oracle::path_sum(p));
    EXPECT_LE(oracle::relative_error(std::exp(forward_pass(p).log_prob), want, 0), 1e-10);
  }
}

TEST(ForwardPass, NaNIsNumericError) {
  auto p = two_by_one();
  p.label_at(1, 0) = std::nan("");
  try {
    forward_pass(p);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNumeric);
  }
}

TEST(BackwardPass, Examples) {
  LatticeProbs<double> single(1, 0);
  single.blank_at(0, 0) = std::log(0.7);
  EXPECT_EQ(backward_pass(single)[0], std::log(0.7));
  EXPECT_NEAR(std::exp(backward_pass(two_by_one())[0]), 0.189, 1e-15);
}

TEST(BackwardPass, AgreesWithForward) {
  std::mt19937_64 rng(21);
  for (int i = 0; i < 50; ++i) {
    auto p = oracle::random_lattice<double>(3, 5, rng);
    EXPECT_NEAR(backward_pass(p)[0], forward_pass(p).log_prob, 1e-12);
  }
}

TEST(DiagonalIdentity, Examples) {
  LatticeProbs<double> single(1, 0);
  single.blank_at(0, 0) = std::log(0.7);
  EXPECT_EQ(diagonal_identity_check(lattice_tables(single)), 0.0);
  EXPECT_LE(diagonal_identity_check(lattice_tables(two_by_one())), 1e-12);
  std::mt19937_64 rng(22);
  for (int i = 0; i < 20; ++i)
    EXPECT_LE(diagonal_identity_check(lattice_tables(oracle::random_lattice<double>(5, 6, rng))), 1e-9);
}

TEST(DiagonalIdentity, HandExpansion) {
  // Diagonal 1 of the 2×1 table: node (1,0) carries .6·.2·.7 and node (0,1)
  // carries .3·.5·.7.
  auto t = lattice_tables(two_by_one());
  EXPECT_NEAR(std::exp(t.alpha_at(1, 0) + t.beta_at(1, 0)), 0.6 * 0.2 * 0.7, 1e-15);
  EXPECT_NEAR(std::exp(t.alpha_at(0, 1) + t.beta_at(0, 1)), 0.3 * 0.5 * 0.7, 1e-15);
}

TEST(LatticeGrad, Examples) {
  LatticeProbs<double> single(1, 0);
  single.blank_at(0, 0) = std::log(0.7);
  EXPECT_NEAR(lattice_grad(single).blank_grad[0], 1.0, 1e-15);
  auto g = lattice_grad(two_by_one());
  EXPECT_NEAR(g.blank_grad[1 * 2 + 1], 1.0, 1e-15);
  EXPECT_EQ(g.blank_grad[1 * 2 + 0], 0.0);
  // Occupancy of the two paths.
  EXPECT_NEAR(g.label_grad[0], 0.105 / 0.189, 1e-14);
  EXPECT_NEAR(g.label_grad[1], 0.084 / 0.189, 1e-14);
}

TEST(LatticeGrad, MatchesFiniteDifferences) {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 10; ++trial) {
    auto p = oracle::random_lattice<double>(4, 3, rng);
    const auto g = lattice_grad(p);
    const auto [fd_blank, fd_label] = oracle::lattice_fd(p);
    for (std::size_t i = 0; i < p.blank.size(); ++i) {
      EXPECT_LE(oracle::relative_error(g.blank_grad[i], fd_blank[i], 1e-6), 1e-6);
      EXPECT_GE(g.blank_grad[i], 0.0);
      EXPECT_LE(g.blank_grad[i], 1.0 + 1e-12);
    }
    for (std::size_t i = 0; i < p.label.size(); ++i)
      EXPECT_LE(oracle::relative_error(g.label_grad[i], fd_label[i], 1e-6), 1e-6);
  }
}

TEST(LatticeGrad, DegenerateLattice) {
  LatticeProbs<double> p(2, 1);  // every entry −∞
  try {
    lattice_grad(p);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDegenerateLattice);
  }
}

TEST(EnumeratePaths, Examples) {
  std::mt19937_64 rng(24);
  auto one = oracle::random_lattice<double>(1, 2, rng);
  EXPECT_NEAR(enumerate_paths(one).log_prob,
              one.label_at(0, 0) + one.label_at(0, 1) + one.blank_at(0, 2), 1e-14);
  EXPECT_EQ(enumerate_paths(one).paths, 1u);
  EXPECT_NEAR(std::exp(enumerate_paths(two_by_one()).log_prob), 0.189, 1e-15);
  EXPECT_EQ(enumerate_paths(two_by_one()).paths, 2u);
  EXPECT_EQ(enumerate_paths(oracle::random_lattice<double>(3, 2, rng)).paths, 6u);
}

TEST(EnumeratePaths, PathCountIsStarsAndBars) {
  std::mt19937_64 rng(25);
  for (std::size_t m = 1; m <= 6; ++m) {
    for (std::size_t u = 0; u <= 6; ++u) {
      auto p = oracle::random_lattice<double>(m, u, rng);
      std::size_t oracle_count = 0;
      const long double want = oracle::path_sum(p, &oracle_count);
      const auto got = enumerate_paths(p);
      EXPECT_EQ(got.paths, oracle::binomial(u + m - 1, m - 1));
      EXPECT_EQ(got.paths, oracle_count);
      EXPECT_LE(oracle::relative_error(std::exp(got.log_prob), static_cast<double>(want), 0), 1e-12);
    }
  }
}

TEST(EnumeratePaths, CapacityGuard) {
  LatticeProbs<double> p(9, 1);
  try {
    enumerate_paths(p);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kCapacity);
  }
}

TEST(ForwardPass, EmptyTargetIsPureBlankPath) {
  std::mt19937_64 rng(26);
  auto p = oracle::random_lattice<double>(5, 0, rng);
  double want = 0;
  for (std::size_t m = 0; m < 5; ++m) want += p.blank_at(m, 0);
  EXPECT_NEAR(forward_pass(p).log_prob, want, 1e-13);
}
