#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "drivelab/labels.hpp"
#include "drivelab/observation.hpp"
#include "drivelab/world.hpp"

namespace drivelab::imitation {

struct LabeledExample {
    perception::Observation obs;
    sim::Action ref_action;            // exactly one reference query produced this
    perception::LabelVector labels;    // twelve targets; s_c/i_b mirror ref_action
    std::uint32_t source_iteration = 0;
    sim::ControllerTag controller_tag = sim::ControllerTag::Reference;
    std::uint32_t episode_id = 0;      // collection episode, for lookahead labeling
    std::uint32_t step_in_episode = 0;

    bool operator==(const LabeledExample& o) const;
};

struct Dataset {
    std::vector<LabeledExample> examples;

    std::size_t size() const { return examples.size(); }
    // multiset union preserving provenance
    void append(const Dataset& other);
};

// Fixed-width record serialization; reused by the file format and by
// canonical multiset comparison.
std::string record_bytes(const LabeledExample& ex);

// Lexicographically sorted record bytes; two datasets hold the same multiset
// of examples iff these are equal.
std::vector<std::string> canonical_records(const Dataset& ds);

void save_dataset(const std::filesystem::path& path, const Dataset& ds);
Dataset load_dataset(const std::filesystem::path& path);

// Flat CSV dump: one row per example, 864 observation cells then the twelve
// labels.
void write_observation_csv(const std::filesystem::path& path, const Dataset& ds);

}  // namespace drivelab::imitation
