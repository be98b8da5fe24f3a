#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "nodegam/network.hpp"
#include "nodegam/preprocess.hpp"

namespace nodegam {

/// Versioned binary model container: magic + version header, a JSON config
/// chunk, the preprocessing pipeline, every parameter tensor as raw
/// little-endian doubles, the per-tree subsample masks, the step counter and
/// a CRC32 trailer. Round-trips bit-exactly. Layout documented in README.md.
struct ModelBundle {
  NodeGamModel model;
  Pipeline pipeline;
  std::map<std::string, std::string> meta;  // provenance etc.
};

void save_model(const std::string& path, const NodeGamModel& model, const Pipeline& pipeline,
                const std::map<std::string, std::string>& meta = {});

ModelBundle load_model(const std::string& path);

/// CRC32 (IEEE 802.3 polynomial) used as the container checksum.
std::uint32_t crc32(const void* data, std::size_t size);

/// Write-to-temp-then-rename; a killed process never leaves a truncated
/// file at `path`.
void atomic_write_file(const std::string& path, const std::string& content);

}  // namespace nodegam
