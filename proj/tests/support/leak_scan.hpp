#pragma once

#include "trifuse/data.hpp"

#include <algorithm>
#include <array>
#include <set>
#include <string>
#include <vector>

namespace trifuse::testing {

/// Exhaustive split audit. Returns an empty string when the split is
/// clean, otherwise the first problem found.
inline std::string scan_split(const Dataset& data, const SplitManifest& splits)
{
    std::vector<int> owner(data.size(), -1);
    if (splits.identities.size() != data.num_identities) {
        return "manifest covers " + std::to_string(splits.identities.size()) + " of " +
               std::to_string(data.num_identities) + " identities";
    }
    for (std::size_t id = 0; id < splits.identities.size(); ++id) {
        const IdentitySplit& s = splits.identities[id];
        const std::vector<const std::vector<std::size_t>*> parts = {&s.train, &s.val, &s.test};
        std::set<std::uint32_t> seen_sessions;
        std::array<std::set<std::uint32_t>, 3> used;
        for (int p = 0; p < 3; ++p) {
            for (std::size_t i : *parts[static_cast<std::size_t>(p)]) {
                if (i >= data.size()) {
                    return "index " + std::to_string(i) + " out of range";
                }
                if (owner[i] != -1) {
                    return "sample " + std::to_string(i) + " appears in two splits";
                }
                owner[i] = p;
                const auto& sample = data.samples[i];
                if (sample.identity != id) {
                    return "sample " + std::to_string(i) + " listed under the wrong identity";
                }
                used[static_cast<std::size_t>(p)].insert(sample.session);
            }
        }
        for (const auto& sample : data.samples) {
            if (sample.identity == id) {
                seen_sessions.insert(sample.session);
            }
        }
        if (s.test.empty() || s.train.empty()) {
            return "identity " + std::to_string(id) + " lacks train or test samples";
        }
        if (seen_sessions.size() == 1) {
            const std::uint32_t only = *seen_sessions.begin();
            if (s.train_sessions != std::vector<std::uint32_t>{only} ||
                s.test_sessions != std::vector<std::uint32_t>{only}) {
                return "single-session identity " + std::to_string(id) + " does not share its session";
            }
            continue;
        }
        for (std::uint32_t t : used[2]) {
            if (used[0].count(t) || used[1].count(t)) {
                return "identity " + std::to_string(id) + ": test session " + std::to_string(t) +
                       " leaks into train or validation";
            }
        }
        if (seen_sessions.size() >= 3) {
            for (std::uint32_t v : used[1]) {
                if (used[0].count(v)) {
                    return "identity " + std::to_string(id) + ": validation session " +
                           std::to_string(v) + " also in train";
                }
            }
            if (s.val.empty()) {
                return "identity " + std::to_string(id) + " has no validation session";
            }
        }
        if (seen_sessions.size() == 2 && used[2].size() != 1) {
            return "two-session identity " + std::to_string(id) + " must test on exactly one session";
        }
    }
    for (std::size_t i = 0; i < owner.size(); ++i) {
        if (owner[i] == -1) {
            return "sample " + std::to_string(i) + " is in no split";
        }
    }
    return {};
}

} // namespace trifuse::testing
