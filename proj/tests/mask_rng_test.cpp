#include <functional>

#include <gtest/gtest.h>

#include "calign/error.hpp"
#include "calign/mask.hpp"
#include "calign/parallel.hpp"
#include "calign/rng.hpp"
#include "calign/spectral.hpp"

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

TEST(ObservationMask, SortsAndReportsMissing) {
  const ObservationMask m(4, {3, 0});
  EXPECT_EQ(m.observed(), (std::vector<int>{0, 3}));
  EXPECT_EQ(m.missing(), (std::vector<int>{1, 2}));
  EXPECT_EQ(m.flags(), (std::vector<bool>{true, false, false, true}));
  EXPECT_EQ(m.observed_count(), 2);
  EXPECT_EQ(m.missing_count(), 2);
  EXPECT_FALSE(m.is_full());
  EXPECT_TRUE(m.contains(3));
  EXPECT_FALSE(m.contains(1));
  EXPECT_EQ(m.to_string(), "{0,3}");
  EXPECT_EQ(ObservationMask::from_flags(m.flags()), m);
  EXPECT_TRUE(ObservationMask::full(3).is_full());
}

TEST(ObservationMask, RejectsInvalidSets) {
  EXPECT_EQ(kind_of([] { ObservationMask(3, {}); }), ErrorKind::InvalidMask);
  EXPECT_EQ(kind_of([] { ObservationMask(3, {1, 1}); }), ErrorKind::InvalidMask);
  EXPECT_EQ(kind_of([] { ObservationMask(3, {3}); }), ErrorKind::InvalidMask);
  EXPECT_EQ(kind_of([] { ObservationMask(3, {-1}); }), ErrorKind::InvalidMask);
  EXPECT_EQ(kind_of([] { ObservationMask::from_flags({false, false}); }), ErrorKind::InvalidMask);
}

TEST(Streams, SameNameAndSeedReproduce) {
  Engine a = make_stream(9, "alpha");
  Engine b = make_stream(9, "alpha");
  EXPECT_EQ(standard_normal(a, 5), standard_normal(b, 5));
}

TEST(Streams, NamesSeedsAndIndicesAreIndependent) {
  EXPECT_NE(make_stream(9, "alpha")(), make_stream(9, "beta")());
  EXPECT_NE(make_stream(9, "alpha")(), make_stream(10, "alpha")());
  EXPECT_NE(make_stream(9, "alpha", 0)(), make_stream(9, "alpha", 1)());
}

TEST(Streams, AddingAConsumerDoesNotPerturbOthers) {
  Engine first = make_stream(5, "first");
  const Vector before = standard_normal(first, 4);
  Engine other = make_stream(5, "newcomer");
  standard_normal(other, 100);
  Engine again = make_stream(5, "first");
  EXPECT_EQ(standard_normal(again, 4), before);
}

TEST(Streams, OrthonormalAndUnitDraws) {
  Engine rng = make_stream(1, "shapes");
  const Matrix q = random_orthonormal(rng, 7, 3);
  EXPECT_LE((q.transpose() * q - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_NEAR(random_unit_vector(rng, 5).norm(), 1.0, 1e-14);
}

TEST(ParallelFor, ResultsDoNotDependOnWorkerCount) {
  auto run = [](int threads) {
    std::vector<double> out(97);
    parallel_for(out.size(), threads, [&](std::size_t i) { out[i] = static_cast<double>(i * i) * 0.5; });
    return out;
  };
  EXPECT_EQ(run(1), run(4));
  EXPECT_THROW(parallel_for(10, 3, [](std::size_t i) {
                 if (i == 7) throw Error(ErrorKind::InvalidInput, "boom");
               }),
               Error);
}

}  // namespace
}  // namespace calign
