#include "tolo/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "tolo/errors.hpp"

namespace tolo {

Detection parse_detection(const nlohmann::json& j) {
  try {
    Detection d;
    d.label = j.at("label").get<std::string>();
    const auto& b = j.at("box");
    if (!b.is_array() || b.size() != 4) throw FormatError("detection box must have 4 numbers");
    d.box = Box{b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};
    d.score = j.value("score", 1.0);
    if (!(d.box.x_min < d.box.x_max && d.box.y_min < d.box.y_max)) {
      throw FormatError("detection '" + d.label + "' has an empty box");
    }
    if (!(d.score >= 0.0 && d.score <= 1.0)) throw FormatError("detection score outside [0, 1]");
    return d;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed detection: ") + e.what());
  }
}

Relation parse_relation(const std::string& s) {
  if (s == "left-of" || s == "left") return Relation::left_of;
  if (s == "right-of" || s == "right") return Relation::right_of;
  if (s == "above") return Relation::above;
  if (s == "below") return Relation::below;
  throw InputError("unknown spatial relation '" + s + "'");
}

std::optional<Detection> best_detection(std::span<const Detection> dets, const std::string& label) {
  std::optional<Detection> best;
  for (const auto& d : dets) {
    if (d.label != label) continue;
    if (!best || d.score > best->score) best = d;
  }
  return best;
}

CheckResult check_spatial(const std::string& a, Relation rel, const std::string& b,
                          std::span<const Detection> dets) {
  const auto da = best_detection(dets, a);
  const auto db = best_detection(dets, b);
  if (!da) return {false, "missing entity '" + a + "'"};
  if (!db) return {false, "missing entity '" + b + "'"};
  bool ok = false;
  switch (rel) {
    case Relation::left_of:
      ok = da->box.center_x() < db->box.center_x();
      break;
    case Relation::right_of:
      ok = da->box.center_x() > db->box.center_x();
      break;
    case Relation::above:
      ok = da->box.center_y() < db->box.center_y();
      break;
    case Relation::below:
      ok = da->box.center_y() > db->box.center_y();
      break;
  }
  if (ok) return {true, ""};
  return {false, "relation not satisfied between '" + a + "' and '" + b + "'"};
}

CheckResult check_size(std::span<const std::string> order, std::span<const Detection> dets) {
  if (order.size() < 2) throw InputError("check_size: ordering needs at least two labels");
  std::vector<double> areas;
  for (const auto& label : order) {
    const auto d = best_detection(dets, label);
    if (!d) return {false, "missing entity '" + label + "'"};
    areas.push_back(d->box.area());
  }
  for (std::size_t i = 0; i + 1 < areas.size(); ++i) {
    if (!(areas[i] > areas[i + 1])) {
      return {false, "'" + order[i] + "' is not bigger than '" + order[i + 1] + "'"};
    }
  }
  return {true, ""};
}

void ColorTable::add(const std::string& name, Interval iv) {
  if (!(iv.lo >= 0.0 && iv.lo < 360.0 && iv.hi > 0.0 && iv.hi <= 360.0) || iv.lo == iv.hi) {
    throw InputError("color '" + name + "': hue interval must lie in [0, 360] with lo != hi");
  }
  bands_[name].push_back(iv);
}

bool ColorTable::contains(const std::string& name, double hue) const {
  auto it = bands_.find(name);
  if (it == bands_.end()) throw InputError("color table has no entry for '" + name + "'");
  for (const auto& iv : it->second) {
    if (iv.lo < iv.hi) {
      if (hue >= iv.lo && hue < iv.hi) return true;
    } else if (hue >= iv.lo || hue < iv.hi) {
      return true;
    }
  }
  return false;
}

ColorTable ColorTable::defaults() {
  ColorTable t;
  t.add("red", {330.0, 30.0});
  t.add("orange", {30.0, 50.0});
  t.add("yellow", {50.0, 75.0});
  t.add("green", {75.0, 165.0});
  t.add("blue", {165.0, 260.0});
  t.add("purple", {260.0, 330.0});
  return t;
}

ColorTable ColorTable::from_json(const nlohmann::json& j) {
  ColorTable t;
  try {
    for (const auto& [name, ivs] : j.items()) {
      for (const auto& iv : ivs) {
        if (!iv.is_array() || iv.size() != 2) throw FormatError("hue interval must be [lo, hi]");
        t.add(name, {iv[0].get<double>(), iv[1].get<double>()});
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed color table: ") + e.what());
  } catch (const InputError& e) {
    throw FormatError(e.what());
  }
  return t;
}

ColorTable ColorTable::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open color table " + path);
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path + ": " + e.what());
  }
}

nlohmann::json ColorTable::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [name, ivs] : bands_) {
    for (const auto& iv : ivs) j[name].push_back({iv.lo, iv.hi});
  }
  return j;
}

namespace {

void skip_ws_and_comments(std::istream& in) {
  for (;;) {
    int c = in.peek();
    if (c == '#') {
      std::string dummy;
      std::getline(in, dummy);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      return;
    }
  }
}

}  // namespace

RgbImage read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image " + path);
  std::string magic;
  in >> magic;
  if (magic != "P6") throw FormatError(path + ": not a binary PPM (P6)");
  RgbImage img;
  int maxval = 0;
  skip_ws_and_comments(in);
  in >> img.width;
  skip_ws_and_comments(in);
  in >> img.height;
  skip_ws_and_comments(in);
  in >> maxval;
  if (!in || img.width <= 0 || img.height <= 0 || maxval != 255) {
    throw FormatError(path + ": unsupported PPM header");
  }
  in.get();
  img.pixels.resize(static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.height) * 3);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size())) {
    throw FormatError(path + ": truncated pixel data");
  }
  return img;
}

void write_ppm(const std::string& path, const RgbImage& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
}

double rgb_to_hue(std::uint8_t r8, std::uint8_t g8, std::uint8_t b8) {
  const double r = r8 / 255.0;
  const double g = g8 / 255.0;
  const double b = b8 / 255.0;
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  const double delta = mx - mn;
  if (delta <= 0.0) return 0.0;
  double h = 0.0;
  if (mx == r) {
    h = 60.0 * std::fmod((g - b) / delta, 6.0);
  } else if (mx == g) {
    h = 60.0 * ((b - r) / delta + 2.0);
  } else {
    h = 60.0 * ((r - g) / delta + 4.0);
  }
  if (h < 0.0) h += 360.0;
  if (h >= 360.0) h -= 360.0;
  return h;
}

std::optional<double> circular_mean_deg(std::span<const double> hues) {
  if (hues.empty()) return std::nullopt;
  constexpr double kDeg = std::numbers::pi / 180.0;
  double s = 0.0;
  double c = 0.0;
  for (double h : hues) {
    s += std::sin(h * kDeg);
    c += std::cos(h * kDeg);
  }
  const double n = static_cast<double>(hues.size());
  if (std::hypot(s / n, c / n) < 1e-9) return std::nullopt;
  double mean = std::atan2(s, c) / kDeg;
  if (mean < 0.0) mean += 360.0;
  if (mean >= 360.0) mean -= 360.0;
  return mean;
}

CheckResult check_color(const std::vector<std::pair<std::string, std::string>>& expected,
                        std::span<const Detection> dets, const RgbImage& image,
                        const ColorTable& table) {
  for (const auto& [label, color] : expected) {
    if (!table.has(color)) return {false, "color table has no entry for '" + color + "'"};
    const auto d = best_detection(dets, label);
    if (!d) return {false, "missing entity '" + label + "'"};
    // Pixel (x, y) is inside when its index range overlaps the box.
    const int x0 = std::max(0, static_cast<int>(std::floor(d->box.x_min)));
    const int y0 = std::max(0, static_cast<int>(std::floor(d->box.y_min)));
    const int x1 = std::min(image.width, static_cast<int>(std::ceil(d->box.x_max)));
    const int y1 = std::min(image.height, static_cast<int>(std::ceil(d->box.y_max)));
    if (x0 >= x1 || y0 >= y1) return {false, "box of '" + label + "' is empty after clipping"};
    std::vector<double> hues;
    hues.reserve(static_cast<std::size_t>((x1 - x0) * (y1 - y0)));
    for (int y = y0; y < y1; ++y) {
      for (int x = x0; x < x1; ++x) {
        const auto p = image.at(x, y);
        hues.push_back(rgb_to_hue(p[0], p[1], p[2]));
      }
    }
    const auto mean = circular_mean_deg(hues);
    if (!mean) return {false, "hue of '" + label + "' has no circular mean"};
    if (!table.contains(color, *mean)) {
      return {false, "'" + label + "' mean hue " + std::to_string(*mean) + " is not " + color};
    }
  }
  return {true, ""};
}

EvalCase parse_case(const nlohmann::json& j) {
  try {
    EvalCase c;
    c.id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
    c.category = j.at("category").get<std::string>();
    c.bucket = j.value("bucket", std::string());
    if (c.category == "spatial") {
      c.objects = j.at("objects").get<std::vector<std::string>>();
      if (c.objects.size() != 2) throw FormatError("spatial case needs exactly two objects");
      c.relation = parse_relation(j.at("relation").get<std::string>());
    } else if (c.category == "size") {
      c.objects = j.at("order").get<std::vector<std::string>>();
      if (c.objects.size() < 2) throw FormatError("size case needs at least two objects");
    } else if (c.category == "color") {
      for (const auto& [label, color] : j.at("colors").items()) {
        c.colors.emplace_back(label, color.get<std::string>());
      }
      c.image = j.at("image").get<std::string>();
    } else {
      throw FormatError("unknown case category '" + c.category + "'");
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed case: ") + e.what());
  } catch (const InputError& e) {
    throw FormatError(e.what());
  }
}

double score_category(std::span<const bool> outcomes) {
  if (outcomes.empty()) throw InputError("score_category: no cases");
  const auto passes = std::count(outcomes.begin(), outcomes.end(), true);
  return 100.0 * static_cast<double>(passes) / static_cast<double>(outcomes.size());
}

nlohmann::json ScoreReport::to_json() const {
  auto score_json = [](const BucketScore& s) {
    return nlohmann::json{{"passes", s.passes}, {"total", s.total}, {"accuracy", s.accuracy()}};
  };
  nlohmann::json j;
  j["overall"] = score_json(overall);
  j["buckets"] = nlohmann::json::object();
  for (const auto& [name, s] : buckets) j["buckets"][name] = score_json(s);
  j["categories"] = nlohmann::json::object();
  for (const auto& [name, s] : categories) j["categories"][name] = score_json(s);
  j["cases"] = nlohmann::json::array();
  for (const auto& [id, r] : results) {
    nlohmann::json c{{"id", id}, {"pass", r.pass}};
    if (!r.diagnostic.empty()) c["diagnostic"] = r.diagnostic;
    j["cases"].push_back(std::move(c));
  }
  return j;
}

ScoreReport score_cases(std::span<const EvalCase> cases,
                        const std::map<std::string, std::vector<Detection>>& dets,
                        const ColorTable& table, const std::string& image_root) {
  if (cases.empty()) throw InputError("score_cases: no cases");
  ScoreReport report;
  const std::vector<Detection> none;
  for (const auto& c : cases) {
    auto it = dets.find(c.id);
    const auto& d = it == dets.end() ? none : it->second;
    CheckResult r;
    if (c.category == "spatial") {
      r = check_spatial(c.objects[0], c.relation, c.objects[1], d);
    } else if (c.category == "size") {
      r = check_size(c.objects, d);
    } else {
      const auto path = std::filesystem::path(image_root) / c.image;
      r = check_color(c.colors, d, read_ppm(path.string()), table);
    }
    auto tally = [&](BucketScore& s) {
      ++s.total;
      if (r.pass) ++s.passes;
    };
    tally(report.overall);
    tally(report.categories[c.category]);
    if (!c.bucket.empty()) tally(report.buckets[c.bucket]);
    report.results.emplace_back(c.id, std::move(r));
  }
  return report;
}

}  // namespace tolo
