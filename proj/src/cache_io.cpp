// SPDX-License-Identifier: Apache-2.0

#include "kvslim/cache_io.hpp"

#include <algorithm>
#include <bit>
#include <limits>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>

#include "kvslim/errors.hpp"

namespace kvslim {

namespace {

class Writer {
  public:
    template <typename T>
    void put(T value) {
        static_assert(std::is_trivially_copyable_v<T>);
        std::uint8_t raw[sizeof(T)];
        std::memcpy(raw, &value, sizeof(T));
        if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
        bytes_.insert(bytes_.end(), raw, raw + sizeof(T));
    }
    void put_all(std::span<const double> xs) {
        for (double x : xs) put(x);
    }
    std::vector<std::uint8_t> take() { return std::move(bytes_); }

  private:
    std::vector<std::uint8_t> bytes_;
};

class Reader {
  public:
    explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    template <typename T>
    T get(const char* field) {
        need(sizeof(T), field);
        std::uint8_t raw[sizeof(T)];
        std::memcpy(raw, bytes_.data() + pos_, sizeof(T));
        if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
        T value;
        std::memcpy(&value, raw, sizeof(T));
        pos_ += sizeof(T);
        return value;
    }

    void need(std::size_t count, const char* field) const {
        if (bytes_.size() - pos_ < count)
            throw FormatError("truncated cache file: " + std::string(field) + " needs " + std::to_string(count) +
                                  " bytes, " + std::to_string(bytes_.size() - pos_) + " available, missing " +
                                  std::to_string(count - (bytes_.size() - pos_)),
                              pos_);
    }

    Vector doubles(std::size_t count, const char* field) {
        if (count > (bytes_.size() - pos_) / 8) need(count * 8, field);
        Vector out(count);
        for (auto& x : out) x = get<double>(field);
        return out;
    }

    std::size_t pos() const noexcept { return pos_; }
    std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

  private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_cache(const KvCache& cache) {
    Writer w;
    for (char c : {'K', 'V', 'C', '1'}) w.put(static_cast<std::uint8_t>(c));
    w.put(kCacheFileVersion);
    w.put(static_cast<std::uint64_t>(cache.size()));
    w.put(static_cast<std::uint32_t>(cache.key_dim()));
    w.put(static_cast<std::uint32_t>(cache.value_dim()));
    w.put(std::uint8_t{0});
    w.put(static_cast<std::uint8_t>(cache.preprocessed() ? 1 : 0));
    w.put_all(cache.keys());
    w.put_all(cache.values());
    if (const auto& meta = cache.norm_meta()) {
        w.put_all(meta->key_shift);
        w.put(meta->key_scale);
        w.put(meta->value_scale);
    }
    return w.take();
}

KvCache decode_cache(std::span<const std::uint8_t> bytes) {
    Reader r(bytes);
    r.need(4, "magic");
    if (std::memcmp(bytes.data(), "KVC1", 4) != 0) throw FormatError("bad magic, expected \"KVC1\"", 0);
    r.get<std::uint32_t>("magic");
    const std::size_t version_at = r.pos();
    const auto version = r.get<std::uint16_t>("version");
    if (version != kCacheFileVersion)
        throw FormatError("unsupported cache file version " + std::to_string(version), version_at);
    const std::size_t n_at = r.pos();
    const auto n = r.get<std::uint64_t>("n");
    const auto d_k = r.get<std::uint32_t>("d_k");
    const auto d_v = r.get<std::uint32_t>("d_v");
    const std::size_t dtype_at = r.pos();
    const auto dtype = r.get<std::uint8_t>("dtype");
    const std::size_t flags_at = r.pos();
    const auto flags = r.get<std::uint8_t>("flags");
    if (n == 0) throw FormatError("cache file declares n = 0; a cache needs at least one pair", n_at);
    if (d_k == 0 || d_v == 0) throw FormatError("cache file declares a zero dimension", n_at + 8);
    if (dtype != 0) throw FormatError("unsupported dtype " + std::to_string(dtype) + " (only 0 = f64)", dtype_at);
    if ((flags & ~1u) != 0) throw FormatError("unknown flag bits " + std::to_string(flags), flags_at);

    if (n > std::numeric_limits<std::size_t>::max() / 8 / (std::size_t{d_k} + d_v))
        throw FormatError("cache file declares an impossible size n = " + std::to_string(n), n_at);
    Vector keys = r.doubles(n * d_k, "key payload");
    Vector values = r.doubles(n * d_v, "value payload");
    std::optional<NormalizationRecord> meta;
    if (flags & 1u) {
        NormalizationRecord rec;
        rec.key_shift = r.doubles(d_k, "normalization trailer");
        rec.key_scale = r.get<double>("normalization trailer");
        rec.value_scale = r.get<double>("normalization trailer");
        meta = std::move(rec);
    }
    if (r.remaining() != 0)
        throw FormatError(std::to_string(r.remaining()) + " unexpected trailing bytes", r.pos());
    try {
        return KvCache(std::move(keys), std::move(values), d_k, d_v, std::move(meta));
    } catch (const std::exception& e) {
        throw FormatError(std::string("invalid cache contents: ") + e.what(), kCacheHeaderBytes);
    }
}

void save_cache(const KvCache& cache, const std::filesystem::path& path) {
    const auto bytes = encode_cache(cache);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

KvCache load_cache(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_cache(bytes);
}

namespace {

std::vector<Vector> read_csv_rows(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::vector<Vector> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#' || line.find_first_not_of(" \t\r") == std::string::npos) continue;
        Vector row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            try {
                std::size_t used = 0;
                row.push_back(std::stod(cell, &used));
                if (cell.find_first_not_of(" \t\r", used) != std::string::npos) throw std::invalid_argument(cell);
            } catch (const std::exception&) {
                throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": not a number: '" + cell +
                                         "'");
            }
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace

KvCache import_csv(const std::filesystem::path& keys_path, const std::filesystem::path& values_path) {
    return KvCache::from_rows(read_csv_rows(keys_path), read_csv_rows(values_path));
}

}  // namespace kvslim
