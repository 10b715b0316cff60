#include <filesystem>
#include <functional>
#include <limits>

#include <gtest/gtest.h>

#include "calign/error.hpp"
#include "calign/io.hpp"
#include "support.hpp"

namespace calign {
namespace {

Error error_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e;
  }
  ADD_FAILURE() << "no error thrown";
  return Error(ErrorKind::Usage, "");
}

TEST(MatrixText, RoundTripsBitExact) {
  Engine rng = make_stream(1, "test_io");
  Matrix m = standard_normal(rng, 5, 3);
  m(0, 0) = 1e-300;
  m(1, 2) = -0.1;
  EXPECT_EQ(parse_matrix(format_matrix(m)), m);
  EXPECT_EQ(format_matrix(Matrix::Identity(2, 2)), "2,2\n1,0\n0,1\n");
  EXPECT_EQ(parse_matrix("0,0\n").size(), 0);
}

TEST(MatrixText, ErrorsNameSourceAndLine) {
  struct Case {
    const char* text;
    const char* where;
  };
  for (const Case& c : {Case{"", "m.txt:1:"}, Case{"2;2\n", "m.txt:1:"}, Case{"2,2\n1,2\n3\n", "m.txt:3:"},
                        Case{"2,2\n1,2\n", "m.txt:3:"}, Case{"1,2\n1,x\n", "m.txt:2:"},
                        Case{"1,2\n1,2,3\n", "m.txt:2:"}, Case{"1,1\n1\n2\n", "m.txt:3:"}}) {
    const Error e = error_of([&] { parse_matrix(c.text, "m.txt"); });
    EXPECT_EQ(e.kind(), ErrorKind::Parse) << c.text;
    EXPECT_NE(std::string(e.what()).find(c.where), std::string::npos) << e.what();
  }
}

TEST(MatrixText, FilesRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "calign_io_test";
  std::filesystem::create_directories(dir);
  const Matrix m = Matrix::Constant(3, 2, 0.25);
  write_matrix(dir / "m.txt", m);
  EXPECT_EQ(read_matrix(dir / "m.txt"), m);
  EXPECT_EQ(error_of([&] { read_matrix(dir / "absent.txt"); }).kind(), ErrorKind::Io);
  std::filesystem::remove_all(dir);
}

TEST(ParamsJson, RoundTripsBitExact) {
  Engine rng = make_stream(2, "test_io");
  const GenerativeParams p = testing::random_params(rng, 3, 6, 4);
  const GenerativeParams q = params_from_json(params_to_json(p));
  ASSERT_EQ(q.ids(), p.ids());
  for (int m = 0; m < 4; ++m) {
    EXPECT_EQ(q.modality(m).loading, p.modality(m).loading);
    EXPECT_EQ(q.modality(m).offset, p.modality(m).offset);
    EXPECT_EQ(q.modality(m).noise_std, p.modality(m).noise_std);
  }
  EXPECT_EQ(params_to_json(q), params_to_json(p));
}

TEST(ParamsJson, RejectsBrokenDocuments) {
  Engine rng = make_stream(3, "test_io");
  const std::string good = params_to_json(testing::random_params(rng, 2, 3, 2));
  EXPECT_EQ(error_of([&] { params_from_json(good.substr(0, good.size() / 2)); }).kind(), ErrorKind::Parse);
  EXPECT_EQ(error_of([] { params_from_json("[]"); }).kind(), ErrorKind::Parse);
  EXPECT_EQ(error_of([] { params_from_json(R"({"format":"other/v1","latent_dim":1,"modalities":[]})"); }).kind(),
            ErrorKind::Parse);

  Json doc = Json::parse(good);
  doc["modalities"][1]["W"][0] = Json::array({1.0});
  const Error width = error_of([&] { params_from_json(doc.dump()); });
  EXPECT_EQ(width.kind(), ErrorKind::Parse);
  EXPECT_NE(std::string(width.what()).find("modalities[1].W[0]"), std::string::npos);

  doc = Json::parse(good);
  doc["modalities"][0]["sigma"] = 0.0;
  EXPECT_EQ(error_of([&] { params_from_json(doc.dump()); }).kind(), ErrorKind::InvariantViolation);
  doc["modalities"][0]["sigma"] = -1.0;
  EXPECT_EQ(error_of([&] { params_from_json(doc.dump()); }).kind(), ErrorKind::InvariantViolation);

  doc = Json::parse(good);
  doc["modalities"][0].erase("mu");
  EXPECT_EQ(error_of([&] { params_from_json(doc.dump()); }).kind(), ErrorKind::Parse);
}

TEST(SpecJson, RoundTrips) {
  SynthSpec s;
  s.modalities = 3;
  s.noise = 0.25;
  s.train_fraction = 0.6;
  const SynthSpec t = spec_from_json(to_json(s));
  EXPECT_EQ(t.modalities, 3);
  EXPECT_EQ(t.noise, 0.25);
  EXPECT_EQ(t.train_fraction, 0.6);
  EXPECT_EQ(to_json(t), to_json(s));
  Json broken = to_json(s);
  broken.erase("noise");
  EXPECT_EQ(error_of([&] { spec_from_json(broken); }).kind(), ErrorKind::Parse);
}

TEST(HeadJson, ParsesAndValidates) {
  const MatchingHead h = head_from_json(R"({"weight":[1,2,3],"bias":-0.5})");
  EXPECT_EQ(h.weight, Vector::LinSpaced(3, 1, 3));
  EXPECT_EQ(h.bias, -0.5);
  EXPECT_EQ(error_of([] { head_from_json(R"({"weight":[1]})"); }).kind(), ErrorKind::Parse);
  EXPECT_EQ(error_of([] { head_from_json("{"); }).kind(), ErrorKind::Parse);
}

TEST(JsonValues, NonFiniteNumbersBecomeNull) {
  AnchorReport r;
  r.upper_bound = std::numeric_limits<double>::infinity();
  EXPECT_TRUE(to_json(r)["upper_bound"].is_null());
}

TEST(CsvWriter, EnforcesTheHeaderWidth) {
  CsvWriter csv({"a", "b"});
  csv.row({"1", format_number(0.5)});
  EXPECT_EQ(csv.text(), "a,b\n1,0.5\n");
  EXPECT_EQ(error_of([&] { csv.row({"1"}); }).kind(), ErrorKind::InvalidInput);
}

TEST(FormatNumber, SeventeenSignificantDigits) {
  EXPECT_EQ(format_number(0.1), "0.10000000000000001");
  EXPECT_EQ(format_number(2.0), "2");
  EXPECT_EQ(std::stod(format_number(1.0 / 3.0)), 1.0 / 3.0);
}

TEST(DumpLine, SingleLineWithNewline) {
  const std::string s = dump_line(Json{{"a", 1}, {"b", "x"}});
  EXPECT_EQ(s, "{\"a\":1,\"b\":\"x\"}\n");
}

}  // namespace
}  // namespace calign
