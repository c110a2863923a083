#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "synct/model.hpp"
#include "test_util.hpp"

using namespace synct;
using testutil::make_model;
using testutil::random_features;
using testutil::random_labels;

namespace {

std::vector<double> values(const Tensor<double>& t) { return {t.data().begin(), t.data().end()}; }

std::vector<double> rows(const Tensor<double>& t, std::size_t begin, std::size_t end) {
  const std::size_t d = t.dim(1);
  return {t.data().begin() + begin * d, t.data().begin() + end * d};
}

double log_sum_exp(const std::vector<double>& v) {
  double mx = -INFINITY;
  for (double x : v) mx = std::max(mx, x);
  double s = 0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

}  // namespace

TEST(ModelConfig, Validation) {
  ModelConfig c = testutil::tiny_config();
  c.n_heads = 3;
  EXPECT_THROW(c.validate(), Error);
  c = testutil::tiny_config();
  c.chunk_overlap = c.chunk_width;
  EXPECT_THROW(c.validate(), Error);
  EXPECT_THROW(SyncTransformer<double>(testutil::tiny_config(), Vocabulary::synthetic(5)), Error);
}

TEST(ModelParams, DeterministicInitialisation) {
  auto a = make_model(testutil::tiny_config(3));
  auto b = make_model(testutil::tiny_config(3));
  auto c = make_model(testutil::tiny_config(4));
  auto na = a.params().named();
  auto nb = b.params().named();
  auto nc = c.params().named();
  ASSERT_EQ(na.size(), nb.size());
  bool any_diff = false;
  for (std::size_t i = 0; i < na.size(); ++i) {
    EXPECT_EQ(na[i].first, nb[i].first);
    EXPECT_EQ(values(na[i].second), values(nb[i].second));
    any_diff |= values(na[i].second) != values(nc[i].second);
  }
  EXPECT_TRUE(any_diff);
}

TEST(FrontEnd, Lengths) {
  auto m = make_model(testutil::tiny_config());
  std::mt19937_64 rng(30);
  Graph<double> g(false);
  EXPECT_EQ(m.front_end(g, random_features(16, 6, rng)).dim(0), 4u);
  EXPECT_EQ(m.front_end(g, random_features(17, 6, rng)).dim(0), 5u);
  EXPECT_EQ(m.front_end(g, random_features(24, 6, rng)).dim(0), 6u);
}

TEST(FrontEnd, ZeroInputGivesPositionalEncoding) {
  auto m = make_model(testutil::tiny_config());
  Graph<double> g(false);
  FeatureSequence<double> zeros(20, 6, std::vector<double>(120, 0.0));
  Tensor<double> s = m.front_end(g, zeros);
  EXPECT_EQ(values(s), values(positional_encoding<double>(5, 16)));
}

TEST(FrontEnd, Errors) {
  auto m = make_model(testutil::tiny_config());
  Graph<double> g(false);
  try {
    m.front_end(g, FeatureSequence<double>(6));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyInput);
  }
  std::mt19937_64 rng(31);
  try {
    m.front_end(g, random_features(8, 5, rng));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kShape);
  }
}

TEST(Encoder, ZeroLeftContextIsPositionLocal) {
  ModelConfig c = testutil::tiny_config();
  c.left_context = 0;
  auto m = make_model(c);
  std::mt19937_64 rng(32);
  Graph<double> g(false);
  Tensor<double> s = m.front_end(g, random_features(40, 6, rng));
  Tensor<double> base = m.encode(g, s);
  for (std::size_t p = 0; p < s.dim(0); ++p) {
    Tensor<double> s2 = s.detached_copy();
    for (std::size_t j = 0; j < 16; ++j) s2.mutable_data()[p * 16 + j] += 0.5;
    Tensor<double> out = m.encode(g, s2);
    for (std::size_t i = 0; i < s.dim(0); ++i) {
      if (i == p) {
        EXPECT_NE(rows(out, i, i + 1), rows(base, i, i + 1));
      } else {
        EXPECT_EQ(rows(out, i, i + 1), rows(base, i, i + 1));
      }
    }
  }
}

TEST(Encoder, FutureFramesDoNotChangeAChunk) {
  auto m = make_model(testutil::small_config());
  std::mt19937_64 rng(33);
  const auto x = random_features(60, 6, rng);
  const LabelSequence y = random_labels(3, 7, rng);
  const auto base_enc = m.encode_utterance(x);
  const auto base_lat = m.lattice_probs_for(x, y);
  const auto& geo = base_enc.geometry;
  for (std::size_t ci = 0; ci + 1 < geo.chunks(); ++ci) {
    const ChunkRange r = geo.chunk(ci);
    const std::size_t first_free = m.front_end_geometry().raw_frames_needed(r.end);
    for (std::size_t t = first_free; t < x.frames(); t += 3) {
      auto x2 = x;
      for (std::size_t j = 0; j < 6; ++j) x2.mutable_values()[t * 6 + j] += 10.0;
      const auto enc = m.encode_utterance(x2);
      ASSERT_EQ(rows(enc.states, r.begin, r.end), rows(base_enc.states, r.begin, r.end));
      const auto lat = m.lattice_probs_for(x2, y);
      for (std::size_t u = 0; u <= y.size(); ++u) {
        ASSERT_EQ(lat.blank_at(ci, u), base_lat.blank_at(ci, u));
        if (u < y.size()) {
          ASSERT_EQ(lat.label_at(ci, u), base_lat.label_at(ci, u));
        }
      }
    }
  }
}

TEST(Encoder, ChunkwiseEncodingMatchesOffline) {
  auto m = make_model(testutil::small_config());
  std::mt19937_64 rng(34);
  const auto x = random_features(57, 6, rng);
  const auto offline = m.encode_utterance(x);
  const auto& geo = offline.geometry;
  const auto& fe = m.front_end_geometry();
  for (std::size_t ci = 0; ci < geo.chunks(); ++ci) {
    const ChunkRange r = geo.chunk(ci);
    // Only the frames this chunk needs have arrived.
    const std::size_t raw = std::min(x.frames(), fe.raw_frames_needed(r.end));
    Graph<double> g(false);
    Tensor<double> s = m.front_end(g, x.slice(0, raw));
    s = slice_rows(g, s, 0, std::min(s.dim(0), raw == x.frames() ? s.dim(0) : fe.settled_length(raw)));
    const auto chunk = m.encode_chunk(g, s, geo, ci);
    const auto want = rows(offline.states, r.begin, r.end);
    const auto got = values(chunk.states);
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-10);
  }
}

TEST(Encoder, ChunkBeforeFramesIsAvailabilityError) {
  auto m = make_model(testutil::tiny_config());
  std::mt19937_64 rng(35);
  Graph<double> g(false);
  Tensor<double> s = m.front_end(g, random_features(8, 6, rng));
  try {
    m.encode_chunk(g, s, m.geometry(10), 3);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kAvailability);
  }
}

TEST(Decoder, StepIsNormalisedAndChunkSensitive) {
  auto m = make_model(testutil::small_config());
  std::mt19937_64 rng(36);
  const auto enc = m.encode_utterance(random_features(48, 6, rng));
  ASSERT_GE(enc.geometry.chunks(), 2u);
  auto s0 = m.initial_state();
  auto s1 = m.initial_state();
  const auto d0 = m.decoder_step(s0, m.prepare_chunk(m.chunk_of(enc, 0)));
  const auto d1 = m.decoder_step(s1, m.prepare_chunk(m.chunk_of(enc, 1)));
  EXPECT_NEAR(log_sum_exp({d0.begin(), d0.end()}), 0.0, 1e-9);
  EXPECT_NEAR(log_sum_exp({d1.begin(), d1.end()}), 0.0, 1e-9);
  EXPECT_NE(std::vector<double>(d0.begin(), d0.end()), std::vector<double>(d1.begin(), d1.end()));
}

TEST(Decoder, EmptyPrefixIsContractError) {
  auto m = make_model(testutil::tiny_config());
  std::mt19937_64 rng(37);
  const auto enc = m.encode_utterance(random_features(12, 6, rng));
  DecoderState<double> s;
  try {
    m.decoder_step(s, m.prepare_chunk(m.chunk_of(enc, 0)));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kContract);
  }
}

TEST(Decoder, IncrementalStepsMatchLatticeRows) {
  // Walk the lattice with a cached state, switching chunks mid-prefix, and
  // compare each step with the teacher-forced lattice entries.
  auto m = make_model(testutil::small_config());
  std::mt19937_64 rng(38);
  const auto x = random_features(64, 6, rng);
  const LabelSequence y = random_labels(4, 7, rng);
  const auto lat = m.lattice_probs_for(x, y);
  const auto enc = m.encode_utterance(x);
  auto state = m.initial_state();
  std::size_t u = 0;
  for (std::size_t ci = 0; ci < enc.geometry.chunks(); ++ci) {
    const auto mem = m.prepare_chunk(m.chunk_of(enc, ci));
    for (std::size_t k = 0; k < 2 && u <= y.size(); ++k) {
      const auto dist = m.decoder_step(state, mem);
      EXPECT_EQ(dist[0], lat.blank_at(ci, u));
      if (u < y.size()) {
        EXPECT_EQ(dist[y[u]], lat.label_at(ci, u));
        state.push(y[u]);
        ++u;
      }
    }
    // Every lattice row of this chunk from a fresh state.
    for (std::size_t v = 0; v <= y.size(); ++v) {
      auto fresh = m.initial_state();
      for (std::size_t i = 0; i < v; ++i) fresh.push(y[i]);
      const auto dist = m.decoder_step(fresh, mem);
      EXPECT_EQ(dist[0], lat.blank_at(ci, v));
    }
  }
}

TEST(Decoder, ExtendingThePrefixLeavesEarlierStepsUnchanged) {
  auto m = make_model(testutil::small_config());
  std::mt19937_64 rng(39);
  const auto x = random_features(16, 6, rng);
  const auto enc = m.encode_utterance(x);
  const auto mem = m.prepare_chunk(m.chunk_of(enc, 0));
  const LabelSequence y = random_labels(5, 7, rng);
  // Whole prefix in one decoder pass through the lattice path.
  Graph<double> g(false);
  const Tensor<double> logp = m.lattice_log_probs(g, enc.states, enc.geometry, y);
  for (std::size_t len = 0; len <= y.size(); ++len) {
    auto s = m.initial_state();
    for (std::size_t i = 0; i < len; ++i) s.push(y[i]);
    const auto dist = m.decoder_step(s, mem);
    for (std::size_t v = 0; v < 7; ++v) EXPECT_EQ(dist[v], logp.data()[len * 7 + v]);
  }
}

TEST(LatticeProbsFor, EmptyTargetAndEntryRange) {
  auto m = make_model(testutil::small_config());
  std::mt19937_64 rng(40);
  const auto x = random_features(40, 6, rng);
  const auto p0 = m.lattice_probs_for(x, {});
  EXPECT_EQ(p0.labels, 0u);
  EXPECT_TRUE(p0.label.empty());
  for (double v : p0.blank) EXPECT_TRUE(std::isfinite(v) && v <= 0);
  const auto p = m.lattice_probs_for(x, random_labels(4, 7, rng));
  for (double v : p.blank) EXPECT_TRUE(std::isfinite(v) && v <= 0);
  for (double v : p.label) EXPECT_TRUE(std::isfinite(v) && v <= 0);
}

TEST(LatticeProbsFor, SingleChunkIsTeacherForcedProduct) {
  auto m = make_model(testutil::small_config());
  std::mt19937_64 rng(41);
  const auto x = random_features(10, 6, rng);  // L = 3 = W, one chunk
  const LabelSequence y = random_labels(3, 7, rng);
  const auto p = m.lattice_probs_for(x, y);
  ASSERT_EQ(p.chunks, 1u);
  double want = p.blank_at(0, 3);
  for (std::size_t u = 0; u < 3; ++u) want += p.label_at(0, u);
  Graph<double> g(false);
  EXPECT_NEAR(-m.sequence_loss(g, x, y).item(), want, 1e-12);
}

TEST(LatticeProbsFor, LabelErrors) {
  auto m = make_model(testutil::tiny_config());
  std::mt19937_64 rng(42);
  const auto x = random_features(10, 6, rng);
  for (LabelSequence bad : {LabelSequence{7}, LabelSequence{0}, LabelSequence{-1}}) {
    try {
      m.lattice_probs_for(x, bad);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kVocab);
    }
  }
}

// Every parameter of a tiny model against central differences of the loss.
TEST(EndToEnd, ParameterGradientsMatchFiniteDifferences) {
  ModelConfig c = testutil::tiny_config(9);
  c.d_model = 16;
  auto m = make_model(c);
  std::mt19937_64 rng(43);
  const auto x = random_features(24, 6, rng);
  const LabelSequence y = random_labels(2, 7, rng);
  auto named = m.params().named();
  for (auto& [name, t] : named) t.clear_grad();
  {
    Graph<double> g;
    g.backward(m.sequence_loss(g, x, y));
  }
  auto loss = [&] {
    Graph<double> g(false);
    return m.sequence_loss(g, x, y).item();
  };
  double worst = 0;
  std::string worst_name;
  for (auto& [name, t] : named) {
    ASSERT_TRUE(t.has_grad()) << name;
    std::vector<double> analytic(t.grad().begin(), t.grad().end());
    auto data = t.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double fd = oracle::central_difference(loss, data[i], 1e-5);
      const double err = oracle::relative_error(analytic[i], fd, 1e-4);
      if (err > worst) {
        worst = err;
        worst_name = name + "[" + std::to_string(i) + "]";
      }
    }
  }
  EXPECT_LE(worst, 1e-4) << worst_name;
}
