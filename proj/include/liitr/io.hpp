#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "liitr/moe.hpp"
#include "liitr/simgen.hpp"

namespace liitr {

// File-level failures; the CLI maps them to "missing artifact".
struct ArtifactError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// %.17g
std::string format_double(double v);

// Header x1..xp,t,y.
std::string dataset_to_csv(const Dataset& data);
Dataset dataset_from_csv(const std::string& text);

// Region labels are written 1-based.
json truth_to_json(const GroundTruth& truth, std::uint64_t seed, const json& config,
                   std::size_t n_train);
GroundTruth truth_from_json(const json& j);

std::string explanations_to_jsonl(std::span<const Explanation> explanations);
std::vector<Explanation> explanations_from_jsonl(const std::string& text);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& contents);
json read_json_file(const std::filesystem::path& path);

std::string sha256_hex(const std::string& bytes);

}  // namespace liitr
