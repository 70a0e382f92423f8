#include "trifuse/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <stdexcept>

namespace trifuse {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

const std::array<const char*, 3> kSplitNames = {"train", "val", "test"};

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Sample counts per session, in session order.
std::vector<std::size_t> session_counts(const SyntheticConfig& cfg, std::size_t sessions)
{
    const std::size_t train = cfg.train_per_identity;
    const std::size_t val = cfg.val_per_identity;
    const std::size_t test = cfg.test_per_identity;
    if (sessions == 1) {
        return {train + val + test};
    }
    if (sessions == 2) {
        return {train + val, test};
    }
    const std::size_t train_sessions = sessions - 2;
    std::vector<std::size_t> counts;
    for (std::size_t s = 0; s < train_sessions; ++s) {
        counts.push_back(train / train_sessions + (s < train % train_sessions ? 1 : 0));
    }
    counts.push_back(val);
    counts.push_back(test);
    return counts;
}

std::size_t ratio_count(std::size_t n, double part, double whole)
{
    if (whole <= 0.0) {
        return 0;
    }
    return static_cast<std::size_t>(std::llround(static_cast<double>(n) * part / whole));
}

void put_u32(std::ostream& out, std::uint32_t v)
{
    const char bytes[4] = {static_cast<char>(v & 0xFFU), static_cast<char>((v >> 8) & 0xFFU),
                           static_cast<char>((v >> 16) & 0xFFU),
                           static_cast<char>((v >> 24) & 0xFFU)};
    out.write(bytes, 4);
}

bool get_u32(std::istream& in, std::uint32_t& v)
{
    unsigned char bytes[4];
    in.read(reinterpret_cast<char*>(bytes), 4);
    if (in.gcount() != 4) {
        return false;
    }
    v = static_cast<std::uint32_t>(bytes[0]) | (static_cast<std::uint32_t>(bytes[1]) << 8) |
        (static_cast<std::uint32_t>(bytes[2]) << 16) | (static_cast<std::uint32_t>(bytes[3]) << 24);
    return true;
}

json dims_json(const std::array<Index, kModalityCount>& dims)
{
    json j = json::object();
    for (auto m : kModalities) {
        j[std::string(modality_name(m))] = dims[index_of(m)];
    }
    return j;
}

template <typename T>
T get_field(const json& j, const char* key, const std::string& where)
{
    if (!j.is_object() || !j.contains(key)) {
        throw DataError(where + ": missing '" + key + "'");
    }
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw DataError(where + ": '" + key + "' has the wrong type");
    }
}

} // namespace

void Dataset::validate() const
{
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        if (s.identity >= num_identities) {
            throw std::out_of_range("sample " + std::to_string(i) + ": identity " +
                                    std::to_string(s.identity) + " outside [0, " +
                                    std::to_string(num_identities) + ")");
        }
        for (auto m : kModalities) {
            if (s[m].size() != dims[index_of(m)]) {
                throw ShapeError("sample " + std::to_string(i) + ": " +
                                 std::string(modality_name(m)) + " has " +
                                 std::to_string(s[m].size()) + " values, expected " +
                                 std::to_string(dims[index_of(m)]));
            }
        }
    }
}

Dataset generate(const SyntheticConfig& cfg, std::uint64_t seed)
{
    cfg.validate();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> unit(0.0, 1.0);

    const std::size_t k = cfg.num_identities;
    std::vector<std::size_t> order(k);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    const auto singles = static_cast<std::size_t>(
        std::llround(cfg.single_session_fraction * static_cast<double>(k)));
    std::vector<std::size_t> num_sessions(k, 1);
    for (std::size_t r = singles; r < k; ++r) {
        num_sessions[order[r]] =
            std::uniform_int_distribution<std::size_t>(2, cfg.max_sessions)(rng);
    }

    Dataset out;
    out.num_identities = k;
    out.dims = cfg.dims;
    std::uint32_t next_session = 0;
    for (std::size_t id = 0; id < k; ++id) {
        std::array<Vector, kModalityCount> prototype;
        for (auto m : kModalities) {
            auto& p = prototype[index_of(m)];
            p.resize(cfg.dims[index_of(m)]);
            for (Index d = 0; d < p.size(); ++d) {
                p(d) = unit(rng);
            }
        }
        for (std::size_t count : session_counts(cfg, num_sessions[id])) {
            if (count == 0) {
                continue;
            }
            const std::uint32_t session = next_session++;
            std::array<Vector, kModalityCount> center;
            for (auto m : kModalities) {
                const auto i = index_of(m);
                center[i] = prototype[i];
                for (Index d = 0; d < center[i].size(); ++d) {
                    center[i](d) += cfg.drift_std[i] * unit(rng);
                }
            }
            for (std::size_t n = 0; n < count; ++n) {
                EmbeddingTriplet s;
                s.identity = static_cast<std::uint32_t>(id);
                s.session = session;
                for (auto m : kModalities) {
                    const auto i = index_of(m);
                    Vector x = center[i];
                    for (Index d = 0; d < x.size(); ++d) {
                        x(d) += cfg.noise_std[i] * unit(rng);
                    }
                    if (cfg.unit_norm) {
                        const double norm = x.norm();
                        if (norm > 0.0) {
                            x /= norm;
                        }
                    }
                    s.embeddings[i] = x.cast<float>().cast<double>();
                }
                out.samples.push_back(std::move(s));
            }
        }
    }
    return out;
}

std::vector<std::size_t> SplitManifest::train_indices() const
{
    std::vector<std::size_t> out;
    for (const auto& id : identities) {
        out.insert(out.end(), id.train.begin(), id.train.end());
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<std::size_t> SplitManifest::val_indices() const
{
    std::vector<std::size_t> out;
    for (const auto& id : identities) {
        out.insert(out.end(), id.val.begin(), id.val.end());
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<std::size_t> SplitManifest::test_indices() const
{
    std::vector<std::size_t> out;
    for (const auto& id : identities) {
        out.insert(out.end(), id.test.begin(), id.test.end());
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<bool> SplitManifest::multi_session_flags() const
{
    std::vector<bool> out;
    out.reserve(identities.size());
    for (const auto& id : identities) {
        out.push_back(id.multi_session());
    }
    return out;
}

SplitManifest build_splits(const Dataset& dataset, std::uint64_t seed, SplitRatios ratios)
{
    if (!(ratios.train > 0.0) || ratios.val < 0.0 || !(ratios.test > 0.0)) {
        throw std::invalid_argument("split ratios need positive train and test parts");
    }
    std::vector<std::map<std::uint32_t, std::vector<std::size_t>>> by_identity(
        dataset.num_identities);
    for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
        const auto& s = dataset.samples[i];
        if (s.identity >= dataset.num_identities) {
            throw std::out_of_range("sample " + std::to_string(i) + " has identity " +
                                    std::to_string(s.identity) + " outside [0, " +
                                    std::to_string(dataset.num_identities) + ")");
        }
        by_identity[s.identity][s.session].push_back(i);
    }

    SplitManifest manifest;
    manifest.identities.resize(dataset.num_identities);
    for (std::size_t id = 0; id < dataset.num_identities; ++id) {
        const auto& sessions = by_identity[id];
        if (sessions.empty()) {
            throw std::invalid_argument("identity " + std::to_string(id) + " has no samples");
        }
        IdentitySplit& split = manifest.identities[id];
        split.identity = static_cast<std::uint32_t>(id);
        for (const auto& [session, idx] : sessions) {
            split.sessions.push_back(session);
        }
        std::mt19937_64 rng(mix_seed(seed ^ mix_seed(id)));
        auto append = [](std::vector<std::size_t>& dst, const std::vector<std::size_t>& src) {
            dst.insert(dst.end(), src.begin(), src.end());
        };

        const std::size_t count = split.sessions.size();
        if (count == 1) {
            const auto session = split.sessions.front();
            split.train_sessions = split.val_sessions = split.test_sessions = {session};
            std::vector<std::size_t> idx = sessions.at(session);
            std::shuffle(idx.begin(), idx.end(), rng);
            const std::size_t n = idx.size();
            const double whole = ratios.train + ratios.val + ratios.test;
            std::size_t n_test = n >= 2 ? std::max<std::size_t>(1, ratio_count(n, ratios.test, whole))
                                        : 0;
            n_test = std::min(n_test, n - 1);
            std::size_t n_val = std::min(ratio_count(n, ratios.val, whole), n - 1 - n_test);
            if (n == 1) {
                n_val = 0;
            }
            split.test.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
            split.val.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_test),
                             idx.begin() + static_cast<std::ptrdiff_t>(n_test + n_val));
            split.train.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_test + n_val),
                               idx.end());
        } else if (count == 2) {
            const auto first = split.sessions[0];
            const auto last = split.sessions[1];
            split.train_sessions = split.val_sessions = {first};
            split.test_sessions = {last};
            append(split.test, sessions.at(last));
            std::vector<std::size_t> idx = sessions.at(first);
            std::shuffle(idx.begin(), idx.end(), rng);
            const std::size_t n = idx.size();
            const std::size_t n_val =
                n >= 2 ? std::min(ratio_count(n, ratios.val, ratios.train + ratios.val), n - 1) : 0;
            split.val.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
            split.train.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());
        } else {
            for (std::size_t s = 0; s + 2 < count; ++s) {
                split.train_sessions.push_back(split.sessions[s]);
                append(split.train, sessions.at(split.sessions[s]));
            }
            split.val_sessions = {split.sessions[count - 2]};
            split.test_sessions = {split.sessions[count - 1]};
            append(split.val, sessions.at(split.sessions[count - 2]));
            append(split.test, sessions.at(split.sessions[count - 1]));
        }
        std::sort(split.train.begin(), split.train.end());
        std::sort(split.val.begin(), split.val.end());
        std::sort(split.test.begin(), split.test.end());
    }
    return manifest;
}

Dataset subset(const Dataset& dataset, std::span<const std::size_t> indices)
{
    Dataset out;
    out.num_identities = dataset.num_identities;
    out.dims = dataset.dims;
    out.samples.reserve(indices.size());
    for (std::size_t i : indices) {
        out.samples.push_back(dataset.samples.at(i));
    }
    return out;
}

ModalityBatch gather(const Dataset& dataset, std::span<const std::size_t> indices)
{
    ModalityBatch batch;
    const auto n = static_cast<Index>(indices.size());
    for (auto m : kModalities) {
        batch[index_of(m)].resize(n, dataset.dims[index_of(m)]);
    }
    for (Index r = 0; r < n; ++r) {
        const auto& s = dataset.samples.at(indices[static_cast<std::size_t>(r)]);
        for (auto m : kModalities) {
            auto row = batch[index_of(m)].row(r);
            if (s.mask.has(m)) {
                row = s[m].transpose();
            } else {
                row.setZero();
            }
        }
    }
    return batch;
}

ModalityBatch gather(const Dataset& dataset)
{
    std::vector<std::size_t> all(dataset.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    return gather(dataset, all);
}

std::vector<bool> DataManifest::multi_session_flags() const
{
    std::vector<bool> out;
    out.reserve(identity_sessions.size());
    for (const auto& s : identity_sessions) {
        out.push_back(s.size() > 1);
    }
    return out;
}

json DataManifest::to_json() const
{
    json ids = json::array();
    for (std::size_t i = 0; i < identity_sessions.size(); ++i) {
        ids.push_back({{"identity", i}, {"sessions", identity_sessions[i]}});
    }
    json splits = json::object();
    for (std::size_t s = 0; s < 3; ++s) {
        splits[kSplitNames[s]] = {{"file", std::string(kSplitNames[s]) + ".bin"},
                                  {"count", split_counts[s]}};
    }
    return {{"format_version", kDataFormatVersion},
            {"num_identities", num_identities},
            {"dims", dims_json(dims)},
            {"splits", splits},
            {"identities", ids},
            {"generator", generator}};
}

DataManifest DataManifest::from_json(const json& j)
{
    const std::string where = "manifest";
    const int version = get_field<int>(j, "format_version", where);
    if (version != kDataFormatVersion) {
        throw DataError("manifest: unsupported format_version " + std::to_string(version));
    }
    DataManifest m;
    m.num_identities = get_field<std::size_t>(j, "num_identities", where);
    const json& dims = j.at("dims");
    for (auto mod : kModalities) {
        const auto name = std::string(modality_name(mod));
        m.dims[index_of(mod)] = get_field<Index>(dims, name.c_str(), "manifest.dims");
        if (m.dims[index_of(mod)] < 1) {
            throw DataError("manifest.dims." + name + " must be positive");
        }
    }
    const json& splits = get_field<json>(j, "splits", where);
    for (std::size_t s = 0; s < 3; ++s) {
        const json& entry = get_field<json>(splits, kSplitNames[s], "manifest.splits");
        m.split_counts[s] =
            get_field<std::size_t>(entry, "count", std::string("manifest.splits.") + kSplitNames[s]);
    }
    m.identity_sessions.assign(m.num_identities, {});
    for (const json& entry : get_field<json>(j, "identities", where)) {
        const auto id = get_field<std::size_t>(entry, "identity", "manifest.identities");
        if (id >= m.num_identities) {
            throw DataError("manifest.identities: identity " + std::to_string(id) +
                            " outside [0, " + std::to_string(m.num_identities) + ")");
        }
        m.identity_sessions[id] =
            get_field<std::vector<std::uint32_t>>(entry, "sessions", "manifest.identities");
    }
    if (j.contains("generator")) {
        m.generator = j.at("generator");
    }
    return m;
}

void write_split_file(const fs::path& path, const Dataset& data)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot open " + path.string() + " for writing");
    }
    for (const auto& s : data.samples) {
        put_u32(out, s.identity);
        put_u32(out, s.session);
        for (auto m : kModalities) {
            if (!s.mask.has(m)) {
                put_u32(out, 0);
                continue;
            }
            const Vector& x = s[m];
            put_u32(out, static_cast<std::uint32_t>(x.size()));
            for (Index d = 0; d < x.size(); ++d) {
                put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(x(d))));
            }
        }
    }
    if (!out) {
        throw std::runtime_error("write failed for " + path.string());
    }
}

Dataset ingest(const fs::path& path, const DataManifest& manifest)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open " + path.string());
    }
    Dataset out;
    out.num_identities = manifest.num_identities;
    out.dims = manifest.dims;
    const std::string file = path.filename().string();
    for (std::size_t record = 0;; ++record) {
        const std::string where = file + " record " + std::to_string(record);
        EmbeddingTriplet s;
        if (!get_u32(in, s.identity)) {
            if (in.gcount() == 0) {
                break;
            }
            throw DataError(where + ": truncated header");
        }
        if (!get_u32(in, s.session)) {
            throw DataError(where + ": truncated header");
        }
        if (s.identity >= manifest.num_identities) {
            throw DataError(where + ": unknown identity " + std::to_string(s.identity));
        }
        const auto& known = manifest.identity_sessions[s.identity];
        if (!known.empty() && std::find(known.begin(), known.end(), s.session) == known.end()) {
            throw DataError(where + ": session " + std::to_string(s.session) +
                            " is not listed for identity " + std::to_string(s.identity));
        }
        for (auto m : kModalities) {
            const auto i = index_of(m);
            std::uint32_t len = 0;
            if (!get_u32(in, len)) {
                throw DataError(where + ": truncated " + std::string(modality_name(m)) +
                                " length");
            }
            if (len == 0) {
                s.mask.set(m, false);
                s.embeddings[i] = Vector::Zero(manifest.dims[i]);
                continue;
            }
            if (static_cast<Index>(len) != manifest.dims[i]) {
                throw DataError(where + ": " + std::string(modality_name(m)) + " has " +
                                std::to_string(len) + " values, manifest says " +
                                std::to_string(manifest.dims[i]));
            }
            Vector x(len);
            for (std::uint32_t d = 0; d < len; ++d) {
                std::uint32_t bits = 0;
                if (!get_u32(in, bits)) {
                    throw DataError(where + ": truncated " + std::string(modality_name(m)) +
                                    " values");
                }
                const float v = std::bit_cast<float>(bits);
                if (!std::isfinite(v)) {
                    throw DataError(where + ": non-finite " + std::string(modality_name(m)) +
                                    " value");
                }
                x(d) = v;
            }
            s.embeddings[i] = std::move(x);
        }
        if (s.mask.empty()) {
            throw DataError(where + ": all modalities are missing");
        }
        out.samples.push_back(std::move(s));
    }
    return out;
}

DataDir make_data_dir(const Dataset& full, const SplitManifest& splits, json generator)
{
    DataDir out;
    out.train = subset(full, splits.train_indices());
    out.val = subset(full, splits.val_indices());
    out.test = subset(full, splits.test_indices());
    out.manifest.num_identities = full.num_identities;
    out.manifest.dims = full.dims;
    out.manifest.identity_sessions.resize(splits.identities.size());
    for (std::size_t i = 0; i < splits.identities.size(); ++i) {
        out.manifest.identity_sessions[i] = splits.identities[i].sessions;
    }
    out.manifest.split_counts = {out.train.size(), out.val.size(), out.test.size()};
    out.manifest.generator = std::move(generator);
    return out;
}

void write_data_dir(const fs::path& dir, const DataDir& data)
{
    fs::create_directories(dir);
    write_split_file(dir / "train.bin", data.train);
    write_split_file(dir / "val.bin", data.val);
    write_split_file(dir / "test.bin", data.test);
    std::ofstream out(dir / "manifest.json");
    if (!out) {
        throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
    }
    out << data.manifest.to_json().dump(2) << '\n';
}

DataDir read_data_dir(const fs::path& dir)
{
    const fs::path manifest_path = dir / "manifest.json";
    std::ifstream in(manifest_path);
    if (!in) {
        throw std::runtime_error("missing " + manifest_path.string());
    }
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw DataError(manifest_path.string() + ": " + e.what());
    }
    DataDir out;
    out.manifest = DataManifest::from_json(j);
    out.train = ingest(dir / "train.bin", out.manifest);
    out.val = ingest(dir / "val.bin", out.manifest);
    out.test = ingest(dir / "test.bin", out.manifest);
    const std::array<std::size_t, 3> got = {out.train.size(), out.val.size(), out.test.size()};
    for (std::size_t s = 0; s < 3; ++s) {
        if (got[s] != out.manifest.split_counts[s]) {
            throw DataError(std::string(kSplitNames[s]) + ".bin holds " + std::to_string(got[s]) +
                            " records, manifest says " +
                            std::to_string(out.manifest.split_counts[s]));
        }
    }
    return out;
}

std::array<double, kModalityCount> feature_scale(const Dataset& data)
{
    std::array<double, kModalityCount> out{};
    for (auto m : kModalities) {
        double sq = 0.0;
        double count = 0.0;
        for (const auto& s : data.samples) {
            if (!s.mask.has(m)) {
                continue;
            }
            sq += s[m].squaredNorm();
            count += static_cast<double>(s[m].size());
        }
        out[index_of(m)] = count > 0.0 ? std::sqrt(sq / count) : 0.0;
    }
    return out;
}

} // namespace trifuse
