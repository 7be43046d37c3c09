#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "tolo/box.hpp"

namespace tolo {

struct Detection {
  std::string label;
  Box box;
  double score = 0.0;
};

Detection parse_detection(const nlohmann::json& j);

/// Outcome of one correctness check; `diagnostic` explains a failure.
struct CheckResult {
  bool pass = false;
  std::string diagnostic;

  explicit operator bool() const { return pass; }
};

enum class Relation { left_of, right_of, above, below };

Relation parse_relation(const std::string& s);

/// Highest-score detection carrying `label`, if any.
std::optional<Detection> best_detection(std::span<const Detection> dets, const std::string& label);

/// "a <relation> b" on box centers, strict on the relevant axis. Image y grows downward.
CheckResult check_spatial(const std::string& a, Relation rel, const std::string& b,
                          std::span<const Detection> dets);

/// `order` lists labels from largest to smallest box area; every step must be strict.
CheckResult check_size(std::span<const std::string> order, std::span<const Detection> dets);

/// Named hue intervals in degrees; an interval with lo > hi wraps through 360.
class ColorTable {
 public:
  struct Interval {
    double lo;
    double hi;
  };

  void add(const std::string& name, Interval iv);
  bool contains(const std::string& name, double hue) const;
  bool has(const std::string& name) const { return bands_.count(name) > 0; }
  const std::map<std::string, std::vector<Interval>>& bands() const { return bands_; }

  /// red/orange/yellow/green/blue/purple bands; red wraps through 0.
  static ColorTable defaults();
  static ColorTable from_json(const nlohmann::json& j);
  static ColorTable load(const std::string& path);
  nlohmann::json to_json() const;

 private:
  std::map<std::string, std::vector<Interval>> bands_;
};

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major RGB triples

  std::array<std::uint8_t, 3> at(int x, int y) const {
    const auto i = (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
                    static_cast<std::size_t>(x)) * 3;
    return {pixels[i], pixels[i + 1], pixels[i + 2]};
  }
};

RgbImage read_ppm(const std::string& path);
void write_ppm(const std::string& path, const RgbImage& img);

/// HSV hue in degrees [0, 360); 0 for achromatic pixels.
double rgb_to_hue(std::uint8_t r, std::uint8_t g, std::uint8_t b);

/// Circular mean of angles in degrees, in [0, 360); nullopt when the mean
/// resultant vanishes (no preferred direction).
std::optional<double> circular_mean_deg(std::span<const double> hues);

/// Mean hue inside each expected label's best box must fall in that color's bands.
CheckResult check_color(const std::vector<std::pair<std::string, std::string>>& expected,
                        std::span<const Detection> dets, const RgbImage& image,
                        const ColorTable& table);

/// One HRS-style evaluation case.
struct EvalCase {
  std::string id;
  std::string category;  // spatial | size | color
  std::vector<std::string> objects;
  Relation relation = Relation::left_of;
  std::vector<std::pair<std::string, std::string>> colors;
  std::string image;
  std::string bucket;
};

EvalCase parse_case(const nlohmann::json& j);

struct BucketScore {
  std::size_t passes = 0;
  std::size_t total = 0;
  double accuracy() const { return total == 0 ? 0.0 : 100.0 * static_cast<double>(passes) / static_cast<double>(total); }
};

/// 100 * passes / total over a nonempty set of outcomes.
double score_category(std::span<const bool> outcomes);

struct ScoreReport {
  BucketScore overall;
  std::map<std::string, BucketScore> buckets;
  std::map<std::string, BucketScore> categories;
  std::vector<std::pair<std::string, CheckResult>> results;

  nlohmann::json to_json() const;
};

/// Runs each case against its detections (keyed by case id). Color cases load
/// their image through `image_root`/case.image.
ScoreReport score_cases(std::span<const EvalCase> cases,
                        const std::map<std::string, std::vector<Detection>>& dets,
                        const ColorTable& table, const std::string& image_root);

}  // namespace tolo
