#include "floodwatch/registry.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace floodwatch {

using ojson = nlohmann::ordered_json;

namespace {

constexpr std::string_view kTvid = "tvid";
constexpr std::string_view kLongitude = "Longitude";
constexpr std::string_view kLatitude = "Latitude";
constexpr std::string_view kRoadsection = "roadsection";
constexpr std::string_view kUrl = "url";
constexpr std::string_view kCodec = "codec";
constexpr std::string_view kResolution = "resolution";

std::pair<std::size_t, std::size_t> line_col(std::string_view text, std::size_t byte) {
  std::size_t line = 1;
  std::size_t col = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

std::string record_name(const std::string& network, std::size_t index, const ojson& obj) {
  if (obj.is_object()) {
    auto it = obj.find(kTvid);
    if (it != obj.end() && it->is_string()) return it->get<std::string>();
  }
  return network + "[" + std::to_string(index) + "]";
}

void validate(const CameraRecord& rec) {
  if (rec.tvid.empty()) throw ValidationError(rec.tvid, "empty tvid");
  if (!std::isfinite(rec.longitude) || rec.longitude < -180.0 || rec.longitude > 180.0) {
    throw ValidationError(rec.tvid, "longitude out of range");
  }
  if (!std::isfinite(rec.latitude) || rec.latitude < -90.0 || rec.latitude > 90.0) {
    throw ValidationError(rec.tvid, "latitude out of range");
  }
  if (!is_valid_uri(rec.url)) throw ValidationError(rec.tvid, "invalid url '" + rec.url + "'");
  if (rec.resolution_hint &&
      (rec.resolution_hint->width <= 0 || rec.resolution_hint->height <= 0)) {
    throw ValidationError(rec.tvid, "non-positive resolution");
  }
}

CameraRecord record_from_json(const std::string& network, std::size_t index, const ojson& obj) {
  const std::string name = record_name(network, index, obj);
  if (!obj.is_object()) throw ValidationError(name, "camera entry is not an object");

  CameraRecord rec;
  rec.network = network;
  auto require = [&](std::string_view key) -> const ojson& {
    auto it = obj.find(key);
    if (it == obj.end()) throw ValidationError(name, "missing key '" + std::string(key) + "'");
    return *it;
  };
  auto string_field = [&](std::string_view key) {
    const ojson& v = require(key);
    if (!v.is_string()) throw ValidationError(name, "'" + std::string(key) + "' must be a string");
    return v.get<std::string>();
  };
  auto number_field = [&](std::string_view key) {
    const ojson& v = require(key);
    if (!v.is_number()) throw ValidationError(name, "'" + std::string(key) + "' must be a number");
    return v.get<double>();
  };

  rec.tvid = string_field(kTvid);
  rec.longitude = number_field(kLongitude);
  rec.latitude = number_field(kLatitude);
  rec.roadsection = string_field(kRoadsection);
  rec.url = string_field(kUrl);

  for (auto it = obj.begin(); it != obj.end(); ++it) {
    const std::string& key = it.key();
    if (key == kTvid || key == kLongitude || key == kLatitude || key == kRoadsection ||
        key == kUrl) {
      continue;
    }
    if (key == kCodec && it->is_string()) {
      if (auto c = codec_from_string(it->get<std::string>())) {
        rec.codec_hint = c;
        continue;
      }
      throw ValidationError(name, "unknown codec '" + it->get<std::string>() + "'");
    }
    if (key == kResolution && it->is_array() && it->size() == 2 && (*it)[0].is_number_integer() &&
        (*it)[1].is_number_integer()) {
      rec.resolution_hint = Resolution{(*it)[0].get<int>(), (*it)[1].get<int>()};
      continue;
    }
    rec.extra[key] = *it;
  }
  validate(rec);
  return rec;
}

ojson record_to_json(const CameraRecord& rec) {
  ojson obj = ojson::object();
  obj[kTvid] = rec.tvid;
  obj[kLongitude] = rec.longitude;
  obj[kLatitude] = rec.latitude;
  obj[kRoadsection] = rec.roadsection;
  obj[kUrl] = rec.url;
  if (rec.codec_hint) obj[kCodec] = to_string(*rec.codec_hint);
  if (rec.resolution_hint) {
    obj[kResolution] = ojson::array({rec.resolution_hint->width, rec.resolution_hint->height});
  }
  for (auto it = rec.extra.begin(); it != rec.extra.end(); ++it) obj[it.key()] = *it;
  return obj;
}

}  // namespace

std::string_view to_string(Codec c) {
  switch (c) {
    case Codec::MJPEG:
      return "MJPEG";
    case Codec::JPEG:
      return "JPEG";
    case Codec::FLV:
      return "FLV";
  }
  return "JPEG";
}

std::optional<Codec> codec_from_string(std::string_view s) {
  if (s == "MJPEG") return Codec::MJPEG;
  if (s == "JPEG") return Codec::JPEG;
  if (s == "FLV") return Codec::FLV;
  return std::nullopt;
}

ParseError::ParseError(const std::string& msg, std::size_t line, std::size_t column)
    : std::runtime_error("registry parse error at line " + std::to_string(line) + ", column " +
                         std::to_string(column) + ": " + msg),
      line_(line),
      column_(column) {}

DuplicateIdError::DuplicateIdError(std::string id)
    : std::runtime_error("duplicate tvid '" + id + "'"), id_(std::move(id)) {}

ValidationError::ValidationError(std::string record, const std::string& reason)
    : std::runtime_error("invalid camera record '" + record + "': " + reason),
      record_(std::move(record)) {}

void CameraRegistry::add_network(const std::string& key) {
  if (by_network_.find(key) == by_network_.end()) {
    by_network_.emplace(key, std::vector<std::size_t>{});
    network_order_.push_back(key);
  }
}

void CameraRegistry::add(CameraRecord rec) {
  if (by_id_.find(rec.tvid) != by_id_.end()) throw DuplicateIdError(rec.tvid);
  add_network(rec.network);
  const std::size_t idx = records_.size();
  by_id_.emplace(rec.tvid, idx);
  by_network_.find(rec.network)->second.push_back(idx);
  records_.push_back(std::move(rec));
}

CameraRegistry CameraRegistry::parse(std::string_view text) {
  ojson doc;
  try {
    doc = ojson::parse(text.begin(), text.end());
  } catch (const nlohmann::json::parse_error& e) {
    auto [line, col] = line_col(text, e.byte == 0 ? 0 : e.byte - 1);
    throw ParseError(e.what(), line, col);
  }
  if (!doc.is_object()) {
    throw ParseError("top level must be an object of network key -> camera list", 1, 1);
  }

  CameraRegistry reg;
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    if (!it->is_array()) {
      auto pos = text.find("\"" + it.key() + "\"");
      auto [line, col] = line_col(text, pos == std::string_view::npos ? 0 : pos);
      throw ParseError("network '" + it.key() + "' must map to a list", line, col);
    }
    reg.add_network(it.key());
    std::size_t index = 0;
    for (const auto& entry : *it) {
      reg.add(record_from_json(it.key(), index++, entry));
    }
  }
  return reg;
}

CameraRegistry CameraRegistry::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open registry " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

CameraRegistry CameraRegistry::from_records(std::vector<CameraRecord> records) {
  CameraRegistry reg;
  for (auto& rec : records) {
    validate(rec);
    reg.add(std::move(rec));
  }
  return reg;
}

std::string CameraRegistry::serialize(int indent) const {
  ojson doc = ojson::object();
  for (const auto& key : network_order_) {
    ojson list = ojson::array();
    for (std::size_t idx : by_network_.find(key)->second) list.push_back(record_to_json(records_[idx]));
    doc[key] = std::move(list);
  }
  return doc.dump(indent);
}

const CameraRecord* CameraRegistry::lookup(std::string_view tvid) const {
  auto it = by_id_.find(tvid);
  return it == by_id_.end() ? nullptr : &records_[it->second];
}

std::vector<std::pair<std::string, std::size_t>> CameraRegistry::network_summary() const {
  std::vector<std::pair<std::string, std::size_t>> rows;
  rows.reserve(network_order_.size());
  for (const auto& key : network_order_) rows.emplace_back(key, by_network_.find(key)->second.size());
  return rows;
}

std::span<const std::size_t> CameraRegistry::members(std::string_view network) const {
  auto it = by_network_.find(network);
  if (it == by_network_.end()) return {};
  return it->second;
}

}  // namespace floodwatch
