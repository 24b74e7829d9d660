#pragma once

#include <memory>
#include <string>

#include "oss/model.hpp"

namespace oss {

// Checkpoint container: magic "OSSCKPT1\n", a decimal manifest byte length
// line, a UTF-8 JSON manifest (config echo plus tensor registry with name,
// shape and payload byte offset), then the raw little-endian float64 payload.
void save_checkpoint(const ModelParams& params, const std::string& path);
std::shared_ptr<ModelParams> load_checkpoint(const std::string& path);

}  // namespace oss
