#include "trifuse/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>

namespace trifuse {

ParamStore::Entry& ParamStore::add(const std::string& name, Matrix init)
{
    if (name.empty()) {
        throw std::invalid_argument("parameter name must not be empty");
    }
    if (index_.count(name) != 0) {
        throw std::invalid_argument("duplicate parameter name '" + name + "'");
    }
    index_.emplace(name, entries_.size());
    Matrix grad = Matrix::Zero(init.rows(), init.cols());
    entries_.push_back(Entry{name, std::move(init), std::move(grad)});
    return entries_.back();
}

bool ParamStore::contains(const std::string& name) const { return index_.count(name) != 0; }

ParamStore::Entry& ParamStore::entry(const std::string& name)
{
    auto it = index_.find(name);
    if (it == index_.end()) {
        throw std::out_of_range("unknown parameter '" + name + "'");
    }
    return entries_[it->second];
}

const ParamStore::Entry& ParamStore::entry(const std::string& name) const
{
    auto it = index_.find(name);
    if (it == index_.end()) {
        throw std::out_of_range("unknown parameter '" + name + "'");
    }
    return entries_[it->second];
}

void ParamStore::zero_grad()
{
    for (auto& e : entries_) {
        e.grad.setZero();
    }
}

std::vector<std::string> ParamStore::names() const
{
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) {
        out.push_back(e.name);
    }
    return out;
}

std::vector<std::string> ParamStore::names_with_prefix(const std::string& prefix) const
{
    std::vector<std::string> out;
    for (const auto& e : entries_) {
        if (e.name.rfind(prefix, 0) == 0) {
            out.push_back(e.name);
        }
    }
    return out;
}

std::size_t ParamStore::scalar_count() const
{
    std::size_t n = 0;
    for (const auto& e : entries_) {
        n += static_cast<std::size_t>(e.value.size());
    }
    return n;
}

void ParamStore::copy_values_from(const ParamStore& other)
{
    if (other.size() != size()) {
        throw std::invalid_argument("parameter stores differ in size");
    }
    for (auto& e : entries_) {
        const auto& src = other.entry(e.name);
        if (src.value.rows() != e.value.rows() || src.value.cols() != e.value.cols()) {
            throw ShapeError("parameter '" + e.name + "' has shape " + shape_str(e.value) +
                             " but source has " + shape_str(src.value));
        }
        e.value = src.value;
    }
}

Matrix fan_in_uniform(Index rows, Index cols, std::uint64_t seed, const std::string& name)
{
    std::mt19937_64 rng(mix_seed(seed ^ stable_hash(name)));
    const double bound = 1.0 / std::sqrt(static_cast<double>(cols));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Matrix m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) {
        m.data()[i] = dist(rng);
    }
    return m;
}

namespace {

constexpr char kMagic[8] = {'T', 'R', 'F', 'Z', 'C', 'K', 'P', 'T'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

template <typename T>
void write_pod(std::ostream& os, const T& v)
{
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const std::filesystem::path& path)
{
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) {
        throw std::runtime_error("truncated checkpoint " + path.string());
    }
    return v;
}

nlohmann::json read_header(std::istream& is, const std::filesystem::path& path)
{
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
        throw std::runtime_error(path.string() + " is not a trifuse checkpoint");
    }
    const auto version = read_pod<std::uint32_t>(is, path);
    if (version != kCheckpointVersion) {
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
    }
    const auto header_bytes = read_pod<std::uint64_t>(is, path);
    std::string text(header_bytes, '\0');
    is.read(text.data(), static_cast<std::streamsize>(header_bytes));
    if (!is) {
        throw std::runtime_error("truncated checkpoint header in " + path.string());
    }
    return nlohmann::json::parse(text);
}

} // namespace

void save_checkpoint(const std::filesystem::path& path, const ParamStore& params,
                     const nlohmann::json& metadata)
{
    nlohmann::json header;
    header["format_version"] = kCheckpointVersion;
    header["metadata"] = metadata;
    auto& list = header["params"] = nlohmann::json::array();
    for (const auto& e : params.entries()) {
        list.push_back({{"name", e.name}, {"shape", {e.value.rows(), e.value.cols()}}});
    }
    const std::string text = header.dump();

    std::ofstream os(path, std::ios::binary);
    if (!os) {
        throw std::runtime_error("cannot open " + path.string() + " for writing");
    }
    os.write(kMagic, sizeof(kMagic));
    write_pod(os, kCheckpointVersion);
    write_pod(os, static_cast<std::uint64_t>(text.size()));
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& e : params.entries()) {
        os.write(reinterpret_cast<const char*>(e.value.data()),
                 static_cast<std::streamsize>(e.value.size() * sizeof(double)));
    }
    if (!os) {
        throw std::runtime_error("failed writing " + path.string());
    }
}

nlohmann::json read_checkpoint_metadata(const std::filesystem::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw std::runtime_error("cannot open checkpoint " + path.string());
    }
    return read_header(is, path).at("metadata");
}

nlohmann::json load_checkpoint(const std::filesystem::path& path, ParamStore& params)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw std::runtime_error("cannot open checkpoint " + path.string());
    }
    const auto header = read_header(is, path);
    const auto& list = header.at("params");

    std::unordered_map<std::string, std::size_t> seen;
    std::vector<Matrix> loaded;
    loaded.reserve(list.size());
    for (const auto& item : list) {
        const auto name = item.at("name").get<std::string>();
        const auto rows = item.at("shape").at(0).get<Index>();
        const auto cols = item.at("shape").at(1).get<Index>();
        if (!params.contains(name)) {
            throw std::runtime_error("checkpoint carries unknown parameter '" + name + "'");
        }
        const auto& expected = params.value(name);
        if (expected.rows() != rows || expected.cols() != cols) {
            throw ShapeError("checkpoint parameter '" + name + "' has shape " +
                             shape_str(rows, cols) + ", model expects " + shape_str(expected));
        }
        Matrix m(rows, cols);
        is.read(reinterpret_cast<char*>(m.data()),
                static_cast<std::streamsize>(m.size() * sizeof(double)));
        if (!is) {
            throw std::runtime_error("truncated checkpoint data for '" + name + "'");
        }
        seen.emplace(name, loaded.size());
        loaded.push_back(std::move(m));
    }
    for (const auto& e : params.entries()) {
        if (seen.count(e.name) == 0) {
            throw std::runtime_error("checkpoint is missing parameter '" + e.name + "'");
        }
    }
    for (auto& e : params.entries()) {
        e.value = std::move(loaded[seen.at(e.name)]);
    }
    return header.at("metadata");
}

} // namespace trifuse
