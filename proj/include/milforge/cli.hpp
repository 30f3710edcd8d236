#pragma once

// Pipeline commands behind the `milforge` executable. Each cmd_* returns a
// process exit code and writes human-readable output to ctx.out / ctx.err.

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "milforge/config.hpp"

namespace milforge::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitData = 2,
  kExitInternal = 3,
};

struct Context {
  ProjectConfig config;
  int jobs = 1;
  std::optional<std::filesystem::path> out_dir;  // --out
  std::ostream* out = nullptr;
  std::ostream* err = nullptr;
};

// Tissue masks as PNG, one per slide, into --out (default <root>/masks).
int cmd_segment(const Context& ctx, const std::vector<std::string>& slides);
// Segments and tiles every slide (all of slides_dir when `slides` is empty)
// and writes <manifests>/<slide>.jsonl. Per-slide failures are listed and
// turn the exit code into kExitData; the other slides are still written.
int cmd_segment_and_tile(const Context& ctx, const std::vector<std::string>& slides);
// Baseline 64-d descriptors for every manifest into <embeddings>/<slide>.milf.
int cmd_featurize(const Context& ctx, const std::vector<std::string>& slides);
// Each descriptor <name>.json is paired with the raw stream <name>.f32.
int cmd_import_embeddings(const Context& ctx,
                          const std::vector<std::filesystem::path>& descriptors);
// Cross-validates the configured variant, or all five when `all_variants`.
// Writes <out>/<variant>/fold_NN.{json,milc}, <out>/splits.json and
// <out>/aggregate.csv (default out: <root>/runs).
int cmd_train(const Context& ctx, bool all_variants);
int cmd_evaluate(const Context& ctx, const std::filesystem::path& checkpoint,
                 const std::vector<std::string>& slides);
// Overlay PNG, JSON sidecar and top-k patches for one slide. `class_id`
// selects the attention branch (default: predicted class).
int cmd_heatmap(const Context& ctx, const std::string& slide_id,
                const std::filesystem::path& checkpoint, std::optional<int> class_id,
                std::optional<int> top_k);
// Re-aggregates fold_*.json reports found under `dirs` into aggregate.csv.
int cmd_report(const Context& ctx, const std::vector<std::filesystem::path>& dirs);

struct SynthOptions {
  int bags = 40;  // embedding bags (kind "bags")
  int min_instances = 20;
  int max_instances = 60;
  int slides = 0;  // synthetic PNG slides instead of bags when > 0
  int slide_width = 2048;
  int slide_height = 1536;
};
// Writes a self-contained synthetic project (config.ini, labels.csv and either
// embeddings or slides) into --out.
int cmd_synth(const Context& ctx, const SynthOptions& opts);

// Full argument parsing and dispatch.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace milforge::cli
