#include <sstream>

#include "doctest.h"
#include "poolcal/data.hpp"
#include "poolcal/errors.hpp"

using namespace poolcal;

namespace {

const char* kSmall =
    "subject_id,study,local_lab,local_measurement,central_measurement,outcome,w_age,z_age\n"
    "a1,A,labA,1.5,1.25,0,0.1,0.1\n"
    "a2,A,labA,2.0,,1,0.2,0.2\n"
    "b1,B,labB,-0.5,0.0,0,0.3,0.3\n"
    "b2,B,labB,0.75,,0,-0.4,-0.4\n"
    "c1,C,labA,3.0,2.5,1,0.0,0.0\n";

PooledDataset parse(const std::string& text, const ColumnSchema& schema = {}) {
  std::istringstream in(text);
  return read_dataset(in, schema);
}

}  // namespace

TEST_SUITE("data") {
  TEST_CASE("reads studies, labs and covariates by first appearance") {
    const auto ds = parse(kSmall);
    CHECK(ds.size() == 5);
    CHECK(ds.num_studies() == 3);
    CHECK(ds.num_local_labs() == 2);
    CHECK(ds.num_labs() == 3);
    CHECK(ds.lab_of_study(0) == 1);
    CHECK(ds.lab_of_study(1) == 2);
    CHECK(ds.lab_of_study(2) == 1);  // shared local lab
    CHECK(ds.lab_label(0) == "central");
    CHECK(ds.lab_label(2) == "labB");
    CHECK(ds.w_names() == std::vector<std::string>{"w_age"});
    CHECK(ds.z_names() == std::vector<std::string>{"z_age"});
    CHECK(ds.calibration_count(0) == 1);
    CHECK(ds.study_size(0) == 2);
    CHECK(ds.subjects()[1].central == std::nullopt);
    CHECK(ds.subjects()[2].central == doctest::Approx(0.0));
    CHECK(ds.warnings().empty());
    CHECK_NOTHROW(ds.require_fit_ready());
  }

  TEST_CASE("explicit covariate lists may share a column") {
    ColumnSchema schema;
    schema.w_columns = {"w_age"};
    schema.z_columns = {"w_age"};
    const auto ds = parse(kSmall, schema);
    CHECK(ds.subjects()[3].w[0] == doctest::Approx(-0.4));
    CHECK(ds.subjects()[3].z[0] == doctest::Approx(-0.4));
    std::ostringstream out;
    write_dataset(out, ds);
    const auto header = out.str().substr(0, out.str().find('\n'));
    CHECK(header.find("w_age") == header.rfind("w_age"));
  }

  TEST_CASE("bad outcome names the line and subject") {
    std::string text = kSmall;
    text.replace(text.find("2.0,,1"), 6, "2.0,,2");
    try {
      parse(text);
      FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("line 3") != std::string::npos);
      CHECK(msg.find("a2") != std::string::npos);
    }
  }

  TEST_CASE("wrong field count is a parse error with line number") {
    std::string text = kSmall;
    text += "d1,C,labA,1.0\n";
    try {
      parse(text);
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.line() == 7);
    }
  }

  TEST_CASE("non-numeric measurement is a parse error") {
    std::string text = kSmall;
    text.replace(text.find("-0.5"), 4, "oops");
    CHECK_THROWS_AS(parse(text), ParseError);
  }

  TEST_CASE("missing required column") {
    CHECK_THROWS_AS(parse("subject_id,study,outcome\na,A,0\n"), ParseError);
  }

  TEST_CASE("study mapped to two labs is rejected") {
    std::string text = kSmall;
    text += "c2,C,labB,1.0,,0,0,0\n";
    CHECK_THROWS_AS(parse(text), ValidationError);
  }

  TEST_CASE("a single study is rejected") {
    CHECK_THROWS_AS(parse("subject_id,study,local_lab,local_measurement,central_measurement,outcome\n"
                          "a,A,L,1,1,0\nb,A,L,2,,1\n"),
                    ValidationError);
  }

  TEST_CASE("study without calibration subjects warns, then fails fit readiness") {
    std::string text = kSmall;
    text.replace(text.find("-0.5,0.0"), 8, "-0.5,");
    const auto ds = parse(text);
    REQUIRE(ds.warnings().size() == 1);
    CHECK(ds.warnings()[0].find("'B'") != std::string::npos);
    CHECK_THROWS_AS(ds.require_fit_ready(), ValidationError);
  }

  TEST_CASE("write/read round trip is exact") {
    const auto ds = parse(kSmall);
    std::ostringstream out;
    write_dataset(out, ds);
    const auto back = parse(out.str());
    REQUIRE(back.size() == ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const auto& a = ds.subjects()[i];
      const auto& b = back.subjects()[i];
      CHECK(a.id == b.id);
      CHECK(a.study == b.study);
      CHECK(a.outcome == b.outcome);
      CHECK(a.local == b.local);
      CHECK(a.central == b.central);
      CHECK(a.w == b.w);
      CHECK(a.z == b.z);
    }
  }

  TEST_CASE("true values survive a round trip when requested") {
    std::vector<SubjectRecord> subjects;
    for (int i = 0; i < 4; ++i) {
      SubjectRecord r;
      r.id = "s" + std::to_string(i);
      r.study = i % 2;
      r.outcome = i == 3;
      r.local = 0.1 * i + 1.0 / 3.0;
      if (i < 2) r.central = -0.7 * i;
      r.true_x = 0.123456789012345678 * i;
      subjects.push_back(r);
    }
    const PooledDataset ds(subjects, {{"A", 1}, {"B", 1}}, {"L"}, {}, {});
    std::ostringstream out;
    write_dataset(out, ds, ',', true);
    ColumnSchema schema;
    schema.true_value = "true_x";
    const auto back = parse(out.str(), schema);
    CHECK(back.has_true_values());
    for (std::size_t i = 0; i < ds.size(); ++i) {
      CHECK(back.subjects()[i].true_x == ds.subjects()[i].true_x);
      CHECK(back.subjects()[i].local == ds.subjects()[i].local);
    }
  }

  TEST_CASE("summary counts") {
    const auto s = summarize_dataset(parse(kSmall));
    CHECK(s.n_subjects == 5);
    CHECK(s.n_calibration == 3);
    CHECK(s.lab_count == 3);
    REQUIRE(s.studies.size() == 3);
    CHECK(s.studies[0].prevalence == doctest::Approx(0.5));
    CHECK(s.studies[2].calibration_fraction == doctest::Approx(1.0));
    REQUIRE(s.labs.size() == 3);
    CHECK(s.labs[0].n_measurements == 3);  // central
    CHECK(s.labs[1].n_measurements == 3);  // labA: a1, a2, c1
  }

  TEST_CASE("semicolon delimiter") {
    ColumnSchema schema;
    schema.delimiter = ';';
    std::string text = kSmall;
    for (auto& ch : text)
      if (ch == ',') ch = ';';
    CHECK(parse(text, schema).size() == 5);
  }
}
