#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tolo/attention.hpp"
#include "tolo/layout.hpp"
#include "tolo/scheduler.hpp"

namespace tolo {

struct GuideOptions {
  EngineConfig engine;
  GuidanceConfig guidance;
  std::uint64_t seed = 0;
  bool dump_maps = false;
};

struct GuideOutcome {
  RunResult result;
  std::string run_dir;
  nlohmann::json manifest;
};

/// Runs one layout and writes its artifacts under out_dir/<layout id>/:
/// trace.jsonl, final/latent_c{k}.tolog, final/concept_{i}.{tolog,pgm},
/// optional maps/step_{t}/concept_{i}.tolog, and manifest.json listing the
/// checksum of every other artifact. Files are written atomically.
GuideOutcome run_guide(const Layout& layout, const GuideOptions& opts, const std::string& out_dir);

/// Directory name used for a layout id (path separators and spaces replaced).
std::string run_dir_name(const std::string& layout_id);

struct ReplayOutcome {
  bool identical = true;
  std::vector<std::string> mismatches;
  std::string run_dir;
};

/// Re-executes a manifest into out_dir and compares every artifact checksum.
ReplayOutcome replay_manifest(const std::string& manifest_path, const std::string& out_dir);

}  // namespace tolo
