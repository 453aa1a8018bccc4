#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "nucleoforge/losses.hpp"
#include "nucleoforge/postproc.hpp"
#include "nucleoforge/stain.hpp"

namespace nucleoforge {

struct PipelineConfig {
    PostprocConfig postproc;
    LossOptions loss;
    SmoothingOptions smoothing;
    int num_classes = 6;
};

/// Accepts either a full pipeline document or a bare post-processing object
/// (keys np_threshold, min_size, marker_threshold, connectivity).
PipelineConfig parse_config(const nlohmann::json& j);
PipelineConfig load_config(const std::filesystem::path& path);
nlohmann::json to_json(const PostprocConfig& cfg);

/// Entry point shared by the executable and tests. Returns the exit status.
int run_cli(int argc, const char* const* argv);
int run_cli(const std::vector<std::string>& args);

}  // namespace nucleoforge
