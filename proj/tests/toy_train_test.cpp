#include <cmath>
#include <functional>

#include <gtest/gtest.h>

#include "calign/error.hpp"
#include "calign/toy_train.hpp"
#include "support.hpp"

namespace calign {
namespace {

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorKind::Usage;
}

struct Fixture {
  SynthWorld world;
  Dataset train;
  Dataset heldout;
  TrainConfig config;
};

Fixture small_setup(const std::string& pattern, std::uint64_t seed = 1) {
  SynthSpec spec;
  spec.latent_dim = 8;
  spec.embed_dim = 8;
  spec.modalities = 3;
  spec.instances = 250;
  spec.raw_dim = 12;
  Fixture f;
  f.world = make_world(spec, seed);
  const auto tr = f.world.train_indices();
  const auto ho = f.world.heldout_indices();
  f.train = Dataset::from_world(f.world, tr, make_masks(MaskPattern::parse(pattern), 3, static_cast<int>(tr.size()), seed));
  f.heldout = Dataset::from_world(f.world, ho, make_masks(MaskPattern{}, 3, static_cast<int>(ho.size()), seed));
  f.config.latent_dim = 8;
  f.config.embed_dim = 8;
  f.config.epochs = 3;
  f.config.batch_size = 32;
  f.config.lr_scale = 1e4;
  f.config.seed = seed;
  return f;
}

TEST(Encode, NormalizesTheProjection) {
  const Vector x = Vector::Unit(4, 2);
  EXPECT_EQ(encode_vector(Matrix::Identity(4, 4), x), x);
  Engine rng = make_stream(1, "test_encode");
  const Vector y = standard_normal(rng, 4);
  EXPECT_TRUE(encode_vector(3.0 * Matrix::Identity(4, 4), y).isApprox(encode_vector(Matrix::Identity(4, 4), y), 1e-15));
  for (int i = 0; i < 20; ++i)
    EXPECT_NEAR(encode_vector(standard_normal(rng, 6, 4), standard_normal(rng, 4)).norm(), 1.0, 1e-12);
  EXPECT_EQ(kind_of([] { encode_vector(Matrix::Zero(3, 4), Vector::Ones(4)); }), ErrorKind::DegenerateEmbedding);
}

TEST(Encode, OnlyObservedModalities) {
  const Fixture f = small_setup("vt");
  const LinearEncoder enc = LinearEncoder::random({12, 12, 12}, 8, 3);
  const ObservedInstance obs = encode(enc, f.train, 5);
  EXPECT_TRUE(obs.observes(0));
  EXPECT_FALSE(obs.observes(2));
  EXPECT_NEAR(obs.at(1).norm(), 1.0, 1e-12);
}

TEST(LinearEncoder, PretrainedQualityBlendsTheShape) {
  const Fixture f = small_setup("full");
  const LinearEncoder zero = LinearEncoder::pretrained(f.world, 8, 0.0, 4);
  EXPECT_EQ(zero.projections[1], LinearEncoder::random({12, 12, 12}, 8, 4).projections[1]);
  const LinearEncoder full = LinearEncoder::pretrained(f.world, 8, 1.0, 4);
  // A quality-1 encoder maps every modality of an instance to the same direction up to raw noise.
  const ObservedInstance obs = encode(full, f.train, 0);
  EXPECT_GT(obs.at(0).dot(obs.at(1)), 0.99);
  EXPECT_EQ(kind_of([&] { LinearEncoder::pretrained(f.world, 8, 1.5, 4); }), ErrorKind::InvalidInput);
}

TEST(RecallAtK, Examples) {
  Engine rng = make_stream(2, "test_recall");
  const Matrix g = testing::random_unit_stack(rng, 8, 20);
  EXPECT_EQ(recall_at_k(g, g, 1), 1.0);
  // Query i is colinear with gallery i+1 and orthogonal to its mate i.
  const Matrix gallery = Matrix::Identity(4, 4);
  Matrix queries(4, 4);
  for (int i = 0; i < 4; ++i) queries.col(i) = Vector::Unit(4, (i + 1) % 4);
  EXPECT_EQ(recall_at_k(queries, gallery, 1), 0.0);
  EXPECT_EQ(recall_at_k(queries, gallery, 1, {1, 2, 3, 0}), 1.0);
  EXPECT_EQ(kind_of([&] { recall_at_k(g, g, 0); }), ErrorKind::InvalidK);
  EXPECT_EQ(kind_of([&] { recall_at_k(g, g, 21); }), ErrorKind::InvalidK);
}

TEST(RecallAtK, TiesFavourTheLowerIndex) {
  const Matrix gallery = Matrix::Ones(2, 3).colwise().normalized();
  const Matrix queries = gallery;
  EXPECT_NEAR(recall_at_k(queries, gallery, 1), 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(recall_at_k(queries, gallery, 2), 2.0 / 3.0, 1e-15);
}

TEST(RecallAtK, RandomEmbeddingsMatchTheNullModel) {
  const int n = 1000, seeds = 20;
  double total = 0.0;
  for (int s = 0; s < seeds; ++s) {
    Engine rng = make_stream(static_cast<std::uint64_t>(s), "test_recall_null");
    total += recall_at_k(testing::random_unit_stack(rng, 16, n), testing::random_unit_stack(rng, 16, n), 1);
  }
  const double p = 1.0 / n;
  const double se = std::sqrt(p * (1.0 - p) / (n * seeds));
  EXPECT_NEAR(total / seeds, p, 3.0 * se);
}

TEST(Warmup, DeterministicAndValidated) {
  const Fixture f = small_setup("full");
  const Dataset complete = f.train.completed();
  const LinearEncoder enc = LinearEncoder::pretrained(f.world, 8, 0.3, 1);
  const GenerativeParams a = warmup(complete, enc, f.config);
  const GenerativeParams b = warmup(complete, enc, f.config);
  EXPECT_EQ(a.modality(2).loading, b.modality(2).loading);
  EXPECT_EQ(a.modality(0).noise_std, b.modality(0).noise_std);

  Dataset single = complete;
  single.ids.resize(1);
  single.features.resize(1);
  for (auto& m : single.masks) m = ObservationMask::full(1);
  LinearEncoder one;
  one.projections = {enc.projections[0]};
  EXPECT_EQ(kind_of([&] { warmup(single, one, f.config); }), ErrorKind::InvalidWarmupData);
  Dataset tiny = complete;
  for (auto& feat : tiny.features) feat = feat.leftCols(1).eval();
  tiny.masks.resize(1);
  EXPECT_EQ(kind_of([&] { warmup(tiny, enc, f.config); }), ErrorKind::InvalidWarmupData);
}

TEST(Warmup, RejectsIncompleteData) {
  const Fixture f = small_setup("vt");
  const LinearEncoder enc = LinearEncoder::pretrained(f.world, 8, 0.3, 1);
  EXPECT_EQ(kind_of([&] { warmup(f.train, enc, f.config); }), ErrorKind::InvalidWarmupData);
}

TEST(GenerativeTracker, FreshStatisticsNeverLowerTheBatchLikelihood) {
  const Fixture f = small_setup("mix:0.5");
  const LinearEncoder enc = LinearEncoder::pretrained(f.world, 8, 0.3, 1);
  std::vector<ObservedInstance> batch;
  for (int i = 0; i < 64; ++i) batch.push_back(encode(enc, f.train, i));
  GenerativeParams params = initialize_params(batch, 8, f.train.ids);
  GenerativeTracker tracker(3, 0.0);
  double previous = total_loglik(params, batch);
  for (int step = 0; step < 10; ++step) {
    std::vector<Posterior> posts;
    for (const auto& obs : batch) posts.push_back(posterior_infer(params, obs));
    tracker.update(params, batch, posts);
    const double now = total_loglik(params, batch);
    EXPECT_GE(now - previous, -1e-8);
    previous = now;
  }
}

TEST(Train, ZeroEpochsLeavesEncodersUnchanged) {
  Fixture f = small_setup("mix:0.5");
  f.config.epochs = 0;
  const LinearEncoder start = LinearEncoder::pretrained(f.world, 8, 0.2, 1);
  const TrainReport r = train(f.train, f.heldout, f.config, nullptr, &start);
  EXPECT_TRUE(r.loss.empty());
  EXPECT_TRUE(r.recall1.empty());
  EXPECT_EQ(r.encoder.projections[2], start.projections[2]);
  EXPECT_EQ(r.steps, 0);
}

TEST(Train, DeterministicTraces) {
  Fixture f = small_setup("mix:0.5");
  const Dataset warm = f.train.completed();
  const LinearEncoder start = LinearEncoder::pretrained(f.world, 8, 0.2, 1);
  const TrainReport a = train(f.train, f.heldout, f.config, &warm, &start);
  const TrainReport b = train(f.train, f.heldout, f.config, &warm, &start);
  EXPECT_EQ(a.loss, b.loss);
  EXPECT_EQ(a.loglik, b.loglik);
  EXPECT_EQ(a.recall1, b.recall1);
  EXPECT_EQ(a.encoder.projections[0], b.encoder.projections[0]);
  ASSERT_EQ(a.loss.size(), 3u);
  EXPECT_GT(a.steps, 0);
}

TEST(Train, FullObservationLossDecreases) {
  Fixture f = small_setup("full");
  f.config.epochs = 10;
  const LinearEncoder start = LinearEncoder::pretrained(f.world, 8, 0.2, 1);
  const TrainReport r = train(f.train, f.heldout, f.config, nullptr, &start);
  EXPECT_LT(r.loss.back(), r.loss.front());
}

TEST(Train, FrozenEncodersOnlyMoveTheGenerativeModel) {
  Fixture f = small_setup("mix:0.5");
  f.config.lr_scale = 0.0;
  const LinearEncoder start = LinearEncoder::pretrained(f.world, 8, 0.2, 1);
  const TrainReport r = train(f.train, f.heldout, f.config, nullptr, &start);
  for (int m = 0; m < 3; ++m) EXPECT_EQ(r.encoder.projections[m], start.projections[m]);
  EXPECT_NE(r.loglik.front(), r.loglik.back());
}

TEST(Train, MatchingHeadLearnsWhenEnabled) {
  Fixture f = small_setup("mix:0.5");
  f.config.matching_enabled = true;
  const LinearEncoder start = LinearEncoder::pretrained(f.world, 8, 0.2, 1);
  const TrainReport r = train(f.train, f.heldout, f.config, nullptr, &start);
  ASSERT_TRUE(r.head.has_value());
  EXPECT_GT(r.head->weight.norm(), 0.0);
}

TEST(Train, ModalitiesMustBeObserved) {
  Fixture f = small_setup("vt");
  for (auto& m : f.train.masks) m = ObservationMask(3, {0, 1});
  EXPECT_EQ(kind_of([&] { train(f.train, f.heldout, f.config); }), ErrorKind::InsufficientCoverage);
}

TEST(Train, RejectsBadConfig) {
  Fixture f = small_setup("full");
  f.config.batch_size = 1;
  EXPECT_EQ(kind_of([&] { train(f.train, f.heldout, f.config); }), ErrorKind::InvalidInput);
}

}  // namespace
}  // namespace calign
