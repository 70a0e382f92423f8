#pragma once

#include "trifuse/config.hpp"
#include "trifuse/modality.hpp"
#include "trifuse/model.hpp"
#include "trifuse/tensor.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace trifuse {

/// One sample: three raw embeddings plus identity and session.
struct EmbeddingTriplet {
    std::array<Vector, kModalityCount> embeddings;
    std::uint32_t identity = 0;
    std::uint32_t session = 0;
    ModalityMask mask = ModalityMask::all();

    const Vector& operator[](ModalityId m) const { return embeddings[index_of(m)]; }
    Vector& operator[](ModalityId m) { return embeddings[index_of(m)]; }
};

struct Dataset {
    std::size_t num_identities = 0;
    std::array<Index, kModalityCount> dims = kDefaultInputDims;
    std::vector<EmbeddingTriplet> samples;

    std::size_t size() const { return samples.size(); }
    /// Throws on wrong dimensions or out-of-range identities.
    void validate() const;
};

/// Synthetic identities with a session model:
///   x = prototype + session_offset + noise
/// with prototype ~ N(0, I), offset ~ N(0, drift^2 I) per (identity,
/// session) and noise ~ N(0, noise^2 I) per sample. Values are rounded
/// to float so they survive the on-disk format unchanged.
Dataset generate(const SyntheticConfig& cfg, std::uint64_t seed);

struct IdentitySplit {
    std::uint32_t identity = 0;
    std::vector<std::uint32_t> sessions; // every session of this identity, ascending
    std::vector<std::uint32_t> train_sessions;
    std::vector<std::uint32_t> val_sessions;
    std::vector<std::uint32_t> test_sessions;
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
    std::vector<std::size_t> test;

    bool multi_session() const { return sessions.size() > 1; }
};

/// Per-identity split assignment. Identities with one session share it
/// across all splits; with two sessions the later one is test and the
/// other is divided into train and validation; with three or more the
/// last is test, the one before it validation and the rest train.
struct SplitManifest {
    std::vector<IdentitySplit> identities; // indexed by identity

    std::vector<std::size_t> train_indices() const;
    std::vector<std::size_t> val_indices() const;
    std::vector<std::size_t> test_indices() const;
    /// Per identity: recorded in more than one session.
    std::vector<bool> multi_session_flags() const;
};

/// Sample-count ratios used when a session has to be divided.
struct SplitRatios {
    double train = 4.0;
    double val = 1.0;
    double test = 1.0;
};

SplitManifest build_splits(const Dataset& dataset, std::uint64_t seed, SplitRatios ratios = {});

Dataset subset(const Dataset& dataset, std::span<const std::size_t> indices);

/// Stacks the selected samples into one matrix per modality. Honors each
/// sample's own availability mask by zeroing absent modalities.
ModalityBatch gather(const Dataset& dataset, std::span<const std::size_t> indices);
ModalityBatch gather(const Dataset& dataset);

// On-disk layout of a dataset directory:
//   manifest.json  dims, counts, per-identity sessions and split sessions
//   train.bin, val.bin, test.bin
// Each .bin record: u32 identity, u32 session, then for face, gesture,
// voice a u32 length followed by that many little-endian f32 values.
inline constexpr int kDataFormatVersion = 1;

struct DataManifest {
    std::size_t num_identities = 0;
    std::array<Index, kModalityCount> dims = kDefaultInputDims;
    std::vector<std::vector<std::uint32_t>> identity_sessions; // indexed by identity
    std::array<std::size_t, 3> split_counts = {0, 0, 0};       // train, val, test
    nlohmann::json generator; // config that produced the data, if synthetic

    std::vector<bool> multi_session_flags() const;
    nlohmann::json to_json() const;
    static DataManifest from_json(const nlohmann::json& j);
};

void write_split_file(const std::filesystem::path& path, const Dataset& data);

/// Reads one split file, validating every record against the manifest.
Dataset ingest(const std::filesystem::path& path, const DataManifest& manifest);

struct DataDir {
    DataManifest manifest;
    Dataset train;
    Dataset val;
    Dataset test;
};

DataDir make_data_dir(const Dataset& full, const SplitManifest& splits, nlohmann::json generator);
void write_data_dir(const std::filesystem::path& dir, const DataDir& data);
DataDir read_data_dir(const std::filesystem::path& dir);

/// Root-mean-square feature value per modality over a dataset.
std::array<double, kModalityCount> feature_scale(const Dataset& data);

} // namespace trifuse
