#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "structvol/ssv.hpp"

namespace structvol {

// Collected schema/range problems, each prefixed with a path into the
// config document.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(std::vector<std::string> issues);
    const std::vector<std::string>& issues() const { return issues_; }

private:
    std::vector<std::string> issues_;
};

// A stage aborted; the stage name travels with the cause.
class StageError : public std::runtime_error {
public:
    StageError(const std::string& stage, const std::string& cause)
        : std::runtime_error(stage + ": " + cause), stage_(stage) {}
    const std::string& stage() const { return stage_; }

private:
    std::string stage_;
};

struct ValidationReport {
    std::vector<std::string> errors;
    bool ok() const { return errors.empty(); }
};

// Schema- and range-checks the config document; never runs a stage.
ValidationReport validate_config(const std::filesystem::path& config_path);

// Executes mgm -> pair -> synth -> ssv -> train-seg -> eval per the config
// and writes every artifact plus a run manifest (each artifact referenced
// exactly once, with a crc32 content hash) under the workspace. Rerunning
// with the same config and seeds reproduces the artifacts byte for byte.
// Progress appears on `log` as line-delimited JSON events.
nlohmann::json run_pipeline(const std::filesystem::path& config_path, std::ostream& log);

// Synthetic-corpus manifest helpers shared by the pipeline and the CLI.
void save_synthetic_manifest(const std::filesystem::path& path,
                             const std::vector<nlohmann::json>& entries);
std::vector<SyntheticEntry> load_synthetic_corpus(const std::filesystem::path& manifest_path);

// Loads a template-library style manifest (list of {image, mask}) as
// full-confidence entries.
std::vector<SyntheticEntry> load_real_corpus(const std::filesystem::path& manifest_path);

uint32_t crc32_of(const std::vector<uint8_t>& bytes);

}  // namespace structvol
