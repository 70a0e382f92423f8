#pragma once

#include "trifuse/tensor.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <deque>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

namespace trifuse {

/// Named learnable parameters, each paired with a gradient buffer of the
/// same shape. Entries never move once added, so tapes may hold pointers
/// to them for the lifetime of the store.
class ParamStore {
public:
    struct Entry {
        std::string name;
        Matrix value;
        Matrix grad;
    };

    Entry& add(const std::string& name, Matrix init);

    bool contains(const std::string& name) const;
    Entry& entry(const std::string& name);
    const Entry& entry(const std::string& name) const;

    Matrix& value(const std::string& name) { return entry(name).value; }
    const Matrix& value(const std::string& name) const { return entry(name).value; }
    Matrix& grad(const std::string& name) { return entry(name).grad; }
    const Matrix& grad(const std::string& name) const { return entry(name).grad; }

    void zero_grad();

    /// Names in registration order.
    std::vector<std::string> names() const;
    std::vector<std::string> names_with_prefix(const std::string& prefix) const;
    std::size_t size() const { return entries_.size(); }
    std::size_t scalar_count() const;

    std::deque<Entry>& entries() { return entries_; }
    const std::deque<Entry>& entries() const { return entries_; }

    /// Copies values (not gradients) from another store with identical
    /// names and shapes.
    void copy_values_from(const ParamStore& other);

private:
    std::deque<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Fan-in scaled uniform init U(-1/sqrt(fan_in), 1/sqrt(fan_in)), seeded
/// from (seed, name) so every parameter is reproducible on its own.
Matrix fan_in_uniform(Index rows, Index cols, std::uint64_t seed, const std::string& name);

// Checkpoint container:
//   magic "TRFZCKPT" | u32 format_version | u64 header_bytes | JSON header |
//   f64 little-endian values, row-major, in header order.
// The header lists {name, shape} per parameter plus free-form metadata.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const ParamStore& params,
                     const nlohmann::json& metadata);

/// Reads only the metadata block.
nlohmann::json read_checkpoint_metadata(const std::filesystem::path& path);

/// Loads into an already-populated store. Every parameter of the store must
/// be present in the file with the same shape and the file may not carry
/// unknown names.
nlohmann::json load_checkpoint(const std::filesystem::path& path, ParamStore& params);

} // namespace trifuse
