#pragma once

#include <filesystem>

#include "handforge/model.hpp"

namespace handforge {

/// Write the model container (structured JSON, schema in
/// schemas/model.schema.json). Serialization is deterministic: sorted keys,
/// full double round-trip precision.
void save_model(const std::filesystem::path& path, const SkinnedModel& model);

/// Read and validate a model container. Unknown keys are rejected.
SkinnedModel load_model(const std::filesystem::path& path);

}  // namespace handforge
