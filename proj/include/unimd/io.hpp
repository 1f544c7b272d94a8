#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "unimd/model.hpp"
#include "unimd/synthetic.hpp"
#include "unimd/tracker.hpp"

namespace unimd {

/// Checkpoint layout: 8-byte magic "UNIMDCK1", u64 little-endian manifest
/// length, JSON manifest (config text plus name/shape/trainable/offset per
/// parameter), then the parameter values as little-endian float32.
std::string checkpoint_bytes(const Model& model);
void save_checkpoint(const Model& model, const std::filesystem::path& path);
/// Rebuilds the model from the stored config, then overwrites every
/// parameter. Throws ValidationError on malformed or mismatched files.
Model model_from_checkpoint(const std::string& bytes);
Model load_checkpoint(const std::filesystem::path& path);

std::string run_to_json(const TrackerRun& run);
TrackerRun run_from_json(const std::string& text);

/// A sequence directory holds meta.json plus frame_NNNN.ppm (and aux_NNNN.ppm).
void save_sequence(const SyntheticSequence& seq, const std::filesystem::path& dir);
SyntheticSequence load_sequence(const std::filesystem::path& dir);

std::string read_file(const std::filesystem::path& path);
/// Creates parent directories as needed.
void write_file(const std::filesystem::path& path, const std::string& bytes);

}  // namespace unimd
