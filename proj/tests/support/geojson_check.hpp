#pragma once

// Structural GeoJSON checker written against RFC 7946 directly (sections 3,
// 3.1.1, 3.1.2, 3.2, 3.3, 5, 7.1). Returns one message per violation.

#include <string>
#include <vector>

#include <json.hpp>

namespace fwtest {

inline void check_position(const nlohmann::json& pos, const std::string& where,
                           std::vector<std::string>& errors) {
  if (!pos.is_array() || pos.size() < 2 || pos.size() > 3) {
    errors.push_back(where + ": position must have 2 or 3 elements");
    return;
  }
  for (const auto& v : pos) {
    if (!v.is_number()) {
      errors.push_back(where + ": position elements must be numbers");
      return;
    }
  }
  const double lon = pos[0].get<double>();
  const double lat = pos[1].get<double>();
  if (lon < -180 || lon > 180) errors.push_back(where + ": longitude out of range");
  if (lat < -90 || lat > 90) errors.push_back(where + ": latitude out of range");
}

inline void check_bbox(const nlohmann::json& obj, const std::string& where,
                       std::vector<std::string>& errors) {
  if (!obj.contains("bbox")) return;
  const auto& b = obj["bbox"];
  if (!b.is_array() || b.size() < 4 || b.size() % 2 != 0) {
    errors.push_back(where + ": bbox must be an array of 2n numbers");
  }
}

inline void check_geometry(const nlohmann::json& g, const std::string& where,
                           std::vector<std::string>& errors) {
  if (g.is_null()) return;  // unlocated feature
  if (!g.is_object() || !g.contains("type") || !g["type"].is_string()) {
    errors.push_back(where + ": geometry must be an object with a type");
    return;
  }
  const std::string type = g["type"];
  if (type == "Point") {
    if (!g.contains("coordinates")) {
      errors.push_back(where + ": Point without coordinates");
      return;
    }
    check_position(g["coordinates"], where, errors);
  } else if (type == "MultiPoint" || type == "LineString" || type == "Polygon" ||
             type == "MultiLineString" || type == "MultiPolygon" || type == "GeometryCollection") {
    // not produced by the code under test; accept shape-wise
  } else {
    errors.push_back(where + ": unknown geometry type " + type);
  }
  check_bbox(g, where, errors);
}

inline std::vector<std::string> check_feature_collection(const nlohmann::json& doc) {
  std::vector<std::string> errors;
  if (!doc.is_object()) return {"top level must be an object"};
  if (doc.value("type", "") != "FeatureCollection") errors.push_back("type must be FeatureCollection");
  for (const char* banned : {"coordinates", "geometries", "geometry", "properties"}) {
    if (doc.contains(banned)) errors.push_back(std::string("collection must not carry ") + banned);
  }
  check_bbox(doc, "collection", errors);
  if (!doc.contains("features") || !doc["features"].is_array()) {
    errors.push_back("features must be an array");
    return errors;
  }
  std::size_t i = 0;
  for (const auto& f : doc["features"]) {
    const std::string where = "feature " + std::to_string(i++);
    if (!f.is_object()) {
      errors.push_back(where + ": not an object");
      continue;
    }
    if (f.value("type", "") != "Feature") errors.push_back(where + ": type must be Feature");
    if (!f.contains("geometry")) errors.push_back(where + ": geometry member missing");
    else check_geometry(f["geometry"], where, errors);
    if (!f.contains("properties")) errors.push_back(where + ": properties member missing");
    else if (!f["properties"].is_object() && !f["properties"].is_null())
      errors.push_back(where + ": properties must be an object or null");
    if (f.contains("id") && !f["id"].is_string() && !f["id"].is_number())
      errors.push_back(where + ": id must be a string or number");
    for (const char* banned : {"coordinates", "geometries", "features"}) {
      if (f.contains(banned)) errors.push_back(where + ": must not carry " + banned);
    }
    check_bbox(f, where, errors);
  }
  return errors;
}

}  // namespace fwtest
