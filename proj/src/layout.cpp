#include "tolo/layout.hpp"

#include <algorithm>
#include <fstream>

#include "tolo/errors.hpp"

namespace tolo {

std::string to_string(RejectRule r) {
  switch (r) {
    case RejectRule::coordinate_over_512:
      return "max(x_min, y_min, x_max, y_max) > 512";
    case RejectRule::x_min_ge_x_max:
      return "x_min >= x_max";
    case RejectRule::y_min_ge_y_max:
      return "y_min >= y_max";
  }
  return "unknown";
}

std::string to_string(Category c) {
  switch (c) {
    case Category::spatial:
      return "spatial";
    case Category::color:
      return "color";
    case Category::size:
      return "size";
    case Category::none:
      break;
  }
  return "";
}

Category parse_category(const std::string& s) {
  if (s.empty()) return Category::none;
  if (s == "spatial") return Category::spatial;
  if (s == "color") return Category::color;
  if (s == "size") return Category::size;
  throw FormatError("unknown layout category '" + s + "'");
}

namespace {

Box parse_box(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 4) {
    throw FormatError("box must be an array of 4 numbers");
  }
  std::array<double, 4> v{};
  for (std::size_t i = 0; i < 4; ++i) {
    if (!j[i].is_number()) throw FormatError("box coordinate is not numeric");
    v[i] = j[i].get<double>();
  }
  return Box{v[0], v[1], v[2], v[3]};
}

}  // namespace

Layout parse_layout(const nlohmann::json& j) {
  if (!j.is_object()) throw FormatError("layout record must be a JSON object");
  Layout l;
  try {
    if (j.contains("id")) {
      l.id = j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump();
    }
    for (const auto& t : j.at("prompt")) l.prompt.push_back(t.get<std::string>());
    for (const auto& b : j.at("boxes")) l.boxes.push_back(parse_box(b));
    for (const auto& c : j.at("concepts")) l.concepts.push_back(c.get<std::vector<int>>());
    if (j.contains("category") && !j["category"].is_null()) {
      l.category = parse_category(j["category"].get<std::string>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed layout: ") + e.what());
  }
  if (l.prompt.empty()) throw FormatError("layout '" + l.id + "': empty prompt");
  if (l.boxes.empty()) throw FormatError("layout '" + l.id + "': no boxes");
  if (l.boxes.size() != l.concepts.size()) {
    throw FormatError("layout '" + l.id + "': boxes and concepts differ in length");
  }
  for (const auto& c : l.concepts) {
    if (c.empty()) throw FormatError("layout '" + l.id + "': empty concept");
    for (int idx : c) {
      if (idx < 0 || static_cast<std::size_t>(idx) >= l.prompt.size()) {
        throw FormatError("layout '" + l.id + "': token index " + std::to_string(idx) +
                          " outside the prompt");
      }
    }
  }
  return l;
}

nlohmann::json layout_to_json(const Layout& l) {
  nlohmann::json j;
  j["id"] = l.id;
  j["prompt"] = l.prompt;
  j["boxes"] = nlohmann::json::array();
  for (const auto& b : l.boxes) j["boxes"].push_back(b.coords());
  j["concepts"] = l.concepts;
  if (l.category != Category::none) j["category"] = to_string(l.category);
  return j;
}

std::vector<Layout> read_layouts(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<Layout> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(parse_layout(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError(path + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const FormatError& e) {
      throw FormatError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::optional<Rejection> validate(const Layout& l) {
  for (std::size_t i = 0; i < l.boxes.size(); ++i) {
    const Box& b = l.boxes[i];
    const double hi = std::max({b.x_min, b.y_min, b.x_max, b.y_max});
    if (hi > kCanvasSize) return Rejection{l.id, i, RejectRule::coordinate_over_512};
    if (b.x_min >= b.x_max) return Rejection{l.id, i, RejectRule::x_min_ge_x_max};
    if (b.y_min >= b.y_max) return Rejection{l.id, i, RejectRule::y_min_ge_y_max};
  }
  return std::nullopt;
}

double pairwise_iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

double layout_iou(const Layout& l) {
  double best = 0.0;
  for (std::size_t i = 0; i < l.boxes.size(); ++i) {
    for (std::size_t j = i + 1; j < l.boxes.size(); ++j) {
      best = std::max(best, pairwise_iou(l.boxes[i], l.boxes[j]));
    }
  }
  return best;
}

int bucket_of(double iou, const BucketThresholds& t) {
  if (iou <= t.lower) return 0;
  if (iou <= t.upper) return 1;
  return 2;
}

nlohmann::json PartitionReport::to_json() const {
  nlohmann::json j;
  j["thresholds"] = {thresholds.lower, thresholds.upper};
  j["counts"] = nlohmann::json::object();
  for (std::size_t b = 0; b < 3; ++b) j["counts"][kBucketNames[b]] = counts[b];
  j["accepted"] = assignments.size();
  j["assignments"] = nlohmann::json::array();
  for (std::size_t i = 0; i < assignments.size(); ++i) {
    j["assignments"].push_back({{"id", assignments[i].first},
                                {"bucket", kBucketNames[static_cast<std::size_t>(assignments[i].second)]},
                                {"iou", ious[i]}});
  }
  j["rejections"] = nlohmann::json::array();
  for (const auto& r : rejections) {
    j["rejections"].push_back({{"id", r.id}, {"box", r.box_index}, {"rule", to_string(r.rule)}});
  }
  return j;
}

PartitionReport partition(const std::vector<Layout>& layouts, const BucketThresholds& t) {
  if (!(t.lower >= 0.0 && t.lower <= t.upper)) {
    throw InputError("partition: thresholds must satisfy 0 <= lower <= upper");
  }
  PartitionReport report;
  report.thresholds = t;
  for (const auto& l : layouts) {
    if (auto rej = validate(l)) {
      report.rejections.push_back(*rej);
      continue;
    }
    const double iou = layout_iou(l);
    const int b = bucket_of(iou, t);
    ++report.counts[static_cast<std::size_t>(b)];
    report.assignments.emplace_back(l.id, b);
    report.ious.push_back(iou);
  }
  return report;
}

}  // namespace tolo
