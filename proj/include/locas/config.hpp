// SPDX-License-Identifier: Apache-2.0
//
// Flat key=value settings with [section] headers. Keys are addressed as
// "section.name"; only keys present in the defaults table are accepted.
//
//   # comment
//   [run]
//   method = locas-glu
//   r = 16
#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>

#include "locas/harness.hpp"
#include "locas/model.hpp"
#include "locas/nlsvd.hpp"
#include "locas/trainer.hpp"

namespace locas {

class Settings {
public:
    // Every known key with its default value.
    Settings();

    // Throws ConfigError for unknown keys or malformed lines.
    void load_file(const std::filesystem::path& path);
    void parse(const std::string& text, const std::string& origin = "<string>");
    void set(const std::string& key, const std::string& value);

    bool explicitly_set(const std::string& key) const { return explicit_.count(key) > 0; }
    const std::string& get(const std::string& key) const;
    long long get_int(const std::string& key) const;
    double get_double(const std::string& key) const;
    bool get_bool(const std::string& key) const;

    // Same format as load_file accepts; sections in sorted order.
    std::string dump() const;

    ModelConfig model() const;
    RunConfig run() const;
    TrainOptions train() const;
    CyclePolicy cycle() const;

private:
    std::map<std::string, std::string> values_;
    std::set<std::string> explicit_;
};

}  // namespace locas
