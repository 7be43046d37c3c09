#pragma once

#include <array>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "tolo/box.hpp"

namespace tolo {

enum class Category { none, spatial, color, size };

/// Prompt, k boxes on the 512x512 canvas and the k concepts they constrain.
struct Layout {
  std::string id;
  std::vector<std::string> prompt;
  std::vector<Box> boxes;
  std::vector<std::vector<int>> concepts;
  Category category = Category::none;

  std::size_t k() const { return boxes.size(); }
};

/// The dirty-data rule a layout violated.
enum class RejectRule { coordinate_over_512, x_min_ge_x_max, y_min_ge_y_max };

std::string to_string(RejectRule r);
std::string to_string(Category c);
Category parse_category(const std::string& s);

struct Rejection {
  std::string id;
  std::size_t box_index = 0;
  RejectRule rule = RejectRule::coordinate_over_512;
};

/// Parses one layout record. Structural problems (missing fields, wrong arity,
/// non-numeric coordinates, token indices outside the prompt) throw FormatError;
/// coordinate rules are left to validate().
Layout parse_layout(const nlohmann::json& j);
nlohmann::json layout_to_json(const Layout& l);

/// Reads a JSON-lines layout file (blank lines skipped). Throws FormatError with
/// the offending line number.
std::vector<Layout> read_layouts(const std::string& path);

/// Applies the three dirty-data rules; nullopt means the layout is accepted.
std::optional<Rejection> validate(const Layout& l);

double pairwise_iou(const Box& a, const Box& b);

/// Maximum IoU over distinct box pairs; 0 for a single box.
double layout_iou(const Layout& l);

/// Overlap buckets: iou <= lower, lower < iou <= upper, iou > upper.
struct BucketThresholds {
  double lower = 0.0;
  double upper = 0.1;
};

inline constexpr std::array<const char*, 3> kBucketNames{"iou_eq_0", "iou_0_to_0.1", "iou_gt_0.1"};

int bucket_of(double iou, const BucketThresholds& t = {});

struct PartitionReport {
  BucketThresholds thresholds;
  std::array<std::size_t, 3> counts{0, 0, 0};
  std::vector<std::pair<std::string, int>> assignments;  // (layout id, bucket)
  std::vector<double> ious;                              // parallel to assignments
  std::vector<Rejection> rejections;

  nlohmann::json to_json() const;
};

/// Validates then buckets every layout by its max pairwise IoU.
PartitionReport partition(const std::vector<Layout>& layouts, const BucketThresholds& t = {});

}  // namespace tolo
