#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "floodwatch/registry.hpp"
#include "floodwatch/simulator.hpp"

using namespace floodwatch;

namespace {

std::string fixture(const std::string& name) {
  std::ifstream in(std::string(FW_TEST_DATA) + "/" + name);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t summary_total(const CameraRegistry& reg) {
  std::size_t n = 0;
  for (const auto& [_, c] : reg.network_summary()) n += c;
  return n;
}

}  // namespace

TEST(Registry, SingleRecordDocument) {
  const auto reg = CameraRegistry::parse(R"js({"DGH": [{
      "tvid": "thbCCTV-12-0090-037-01",
      "Longitude": 121.70156,
      "Latitude": 24.93671,
      "roadsection": "Provincial Highway 9 (Sec. 8, Beiyi Rd.)",
      "url": "http://11.22.33.44/T9-1K+150"}]})js");
  ASSERT_EQ(reg.size(), 1u);
  const auto summary = reg.network_summary();
  ASSERT_EQ(summary.size(), 1u);
  EXPECT_EQ(summary[0].first, "DGH");
  EXPECT_EQ(summary[0].second, 1u);
  const CameraRecord* r = reg.lookup("thbCCTV-12-0090-037-01");
  ASSERT_NE(r, nullptr);
  EXPECT_DOUBLE_EQ(r->longitude, 121.70156);
  EXPECT_DOUBLE_EQ(r->latitude, 24.93671);
  EXPECT_EQ(r->network, "DGH");
  EXPECT_FALSE(r->codec_hint.has_value());
}

TEST(Registry, EmptyNetworkList) {
  const auto reg = CameraRegistry::parse(R"({"DGH": []})");
  EXPECT_EQ(reg.size(), 0u);
  EXPECT_TRUE(reg.empty());
  EXPECT_EQ(summary_total(reg), 0u);
}

TEST(Registry, DuplicateTvidAcrossNetworks) {
  try {
    CameraRegistry::parse(fixture("duplicate_tvid.json"));
    FAIL() << "expected DuplicateIdError";
  } catch (const DuplicateIdError& e) {
    EXPECT_EQ(e.id(), "X");
  }
}

TEST(Registry, OutOfRangeCoordinateNamesRecord) {
  try {
    CameraRegistry::parse(fixture("bad_latitude.json"));
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_EQ(e.record(), "far-north");
  }
  EXPECT_THROW(CameraRegistry::parse(R"({"A":[{"tvid":"w","Longitude":-180.5,"Latitude":0,
      "roadsection":"","url":"http://h/x"}]})"),
               ValidationError);
}

TEST(Registry, BoundaryCoordinatesAccepted) {
  const auto reg = CameraRegistry::parse(R"({"A":[
      {"tvid":"a","Longitude":-180,"Latitude":-90,"roadsection":"","url":"http://h/a"},
      {"tvid":"b","Longitude":180,"Latitude":90,"roadsection":"","url":"http://h/b"}]})");
  EXPECT_EQ(reg.size(), 2u);
}

TEST(Registry, InvalidUrlRejected) {
  EXPECT_THROW(CameraRegistry::parse(R"({"A":[{"tvid":"a","Longitude":1,"Latitude":1,
      "roadsection":"","url":""}]})"),
               ValidationError);
  EXPECT_THROW(CameraRegistry::parse(R"({"A":[{"tvid":"a","Longitude":1,"Latitude":1,
      "roadsection":"","url":"not a uri"}]})"),
               ValidationError);
}

TEST(Registry, MalformedDocumentCarriesLocation) {
  try {
    CameraRegistry::parse("{\n  \"DGH\": [\n    {\"tvid\": }\n  ]\n}");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
    EXPECT_GT(e.column(), 0u);
  }
  EXPECT_THROW(CameraRegistry::parse(R"(["not", "a", "map"])"), ParseError);
  EXPECT_THROW(CameraRegistry::parse(R"({"DGH": {"tvid": "x"}})"), ParseError);
}

TEST(Registry, TrailingCommaIsRejectedStrictly) {
  try {
    CameraRegistry::parse(fixture("trailing_comma.json"));
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 10u);
  }
}

TEST(Registry, LookupMissingAndEmpty) {
  const auto reg = CameraRegistry::parse(fixture("sample_registry.json"));
  EXPECT_EQ(reg.lookup("missing-id"), nullptr);
  EXPECT_EQ(CameraRegistry{}.lookup("anything"), nullptr);
  for (const auto& rec : reg.records()) {
    const auto* found = reg.lookup(rec.tvid);
    ASSERT_NE(found, nullptr);
    EXPECT_EQ(*found, rec);
  }
}

TEST(Registry, SummaryEmptyAndSingleNetwork) {
  EXPECT_TRUE(CameraRegistry{}.network_summary().empty());
  const auto reg = CameraRegistry::parse(R"({"KC":[
      {"tvid":"a","Longitude":120,"Latitude":22,"roadsection":"","url":"http://h/a"},
      {"tvid":"b","Longitude":120,"Latitude":22,"roadsection":"","url":"http://h/b"},
      {"tvid":"c","Longitude":120,"Latitude":22,"roadsection":"","url":"http://h/c"}]})");
  const auto s = reg.network_summary();
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s[0], (std::pair<std::string, std::size_t>{"KC", 3}));
}

TEST(Registry, SampleDocumentOrderAndRoundTrip) {
  const auto reg = CameraRegistry::parse(fixture("sample_registry.json"));
  const auto s = reg.network_summary();
  ASSERT_EQ(s.size(), 3u);
  EXPECT_EQ(s[0].first, "DGH");
  EXPECT_EQ(s[1].first, "NTPC");
  EXPECT_EQ(s[2].first, "NC");
  EXPECT_EQ(s[2].second, 0u);
  const auto again = CameraRegistry::parse(reg.serialize());
  EXPECT_EQ(again, reg);
  EXPECT_EQ(again.serialize(), reg.serialize());
}

TEST(Registry, ExtensionAndUnknownFieldsPreserved) {
  const auto reg = CameraRegistry::parse(R"({"TYC":[{"tvid":"s1","Longitude":121.3,
      "Latitude":24.99,"roadsection":"sewer","url":"http://h/s1","codec":"FLV",
      "resolution":[352,240],"operator":{"name":"x","since":2019},"etc":[1,2]}]})");
  const auto* r = reg.lookup("s1");
  ASSERT_NE(r, nullptr);
  ASSERT_TRUE(r->codec_hint);
  EXPECT_EQ(*r->codec_hint, Codec::FLV);
  ASSERT_TRUE(r->resolution_hint);
  EXPECT_EQ(*r->resolution_hint, (Resolution{352, 240}));
  EXPECT_EQ(r->extra["operator"]["since"], 2019);
  const auto again = CameraRegistry::parse(reg.serialize());
  EXPECT_EQ(again, reg);
  EXPECT_NE(reg.serialize().find("\"operator\""), std::string::npos);
}

TEST(Registry, ReferenceSplitSumsTo2379) {
  const SimScenario fleet = reference_fleet();
  std::vector<CameraRecord> recs;
  for (const auto& c : fleet.cameras) {
    CameraRecord r;
    r.tvid = c.tvid;
    r.network = c.network;
    r.longitude = c.longitude;
    r.latitude = c.latitude;
    r.roadsection = c.roadsection;
    r.url = "http://127.0.0.1/cam/" + c.tvid + "/frame";
    r.codec_hint = c.codec;
    recs.push_back(r);
  }
  const auto reg = CameraRegistry::from_records(std::move(recs));
  EXPECT_EQ(reg.size(), 2379u);
  EXPECT_EQ(summary_total(reg), 2379u);
  const auto summary = reg.network_summary();
  std::map<std::string, std::size_t> counts(summary.begin(), summary.end());
  EXPECT_EQ(counts["DGH"], 1424u);
  EXPECT_EQ(counts["NTPC"], 289u);
  EXPECT_EQ(counts["TYC"], 123u + 29u);
  EXPECT_EQ(counts["TNC"], 148u);
  EXPECT_EQ(counts["KC"], 341u);
  EXPECT_EQ(counts["NC"], 25u);
  std::size_t flv = 0;
  for (const auto& r : reg.records()) flv += r.codec_hint == Codec::FLV;
  EXPECT_EQ(flv, 29u);
  const auto again = CameraRegistry::parse(reg.serialize());
  EXPECT_EQ(again, reg);
}

// Index covers each record exactly once for random documents.
TEST(Registry, IndexPropertyRandomDocuments) {
  std::mt19937 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    std::ostringstream doc;
    doc << "{";
    const int networks = 1 + static_cast<int>(rng() % 5);
    int id = 0;
    for (int n = 0; n < networks; ++n) {
      doc << (n ? "," : "") << "\"N" << n << "\":[";
      const int cams = static_cast<int>(rng() % 7);
      for (int c = 0; c < cams; ++c) {
        doc << (c ? "," : "") << R"({"tvid":"t)" << id++ << R"(","Longitude":)"
            << (static_cast<int>(rng() % 360) - 180) << R"(,"Latitude":)"
            << (static_cast<int>(rng() % 180) - 90) << R"(,"roadsection":"r","url":"http://h/x"})";
      }
      doc << "]";
    }
    doc << "}";
    const auto reg = CameraRegistry::parse(doc.str());
    EXPECT_EQ(summary_total(reg), reg.size());
    std::vector<int> seen(reg.size(), 0);
    for (const auto& [key, _] : reg.network_summary()) {
      for (auto idx : reg.members(key)) ++seen[idx];
    }
    EXPECT_TRUE(std::all_of(seen.begin(), seen.end(), [](int s) { return s == 1; }));
    EXPECT_EQ(CameraRegistry::parse(reg.serialize()), reg);
  }
}
