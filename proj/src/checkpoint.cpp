#include "afd/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

#include "afd/errors.hpp"

namespace afd {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

template <typename U>
void put(std::string& out, U value) {
    char bytes[sizeof(U)];
    std::memcpy(bytes, &value, sizeof(U));
    out.append(bytes, sizeof(U));
}

class Reader {
public:
    explicit Reader(std::string bytes) : bytes_(std::move(bytes)) {}

    template <typename U>
    U get(const char* what) {
        need(sizeof(U), what);
        U value;
        std::memcpy(&value, bytes_.data() + pos_, sizeof(U));
        pos_ += sizeof(U);
        return value;
    }

    std::string get_string(std::size_t n, const char* what) {
        need(n, what);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    void get_floats(std::vector<float>& out, std::size_t n, const char* what) {
        if (n > (bytes_.size() - pos_) / sizeof(float)) need(n * sizeof(float), what);
        out.resize(n);
        std::memcpy(out.data(), bytes_.data() + pos_, n * sizeof(float));
        pos_ += n * sizeof(float);
    }

    std::size_t pos() const { return pos_; }
    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n, const char* what) const {
        if (bytes_.size() - pos_ < n) throw FormatError(std::string("checkpoint truncated while reading ") + what, pos_);
    }

    std::string bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

void write_checkpoint(const std::string& path, const std::vector<NamedArray>& entries) {
    std::string out(kCheckpointMagic, 4);
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
    for (const auto& e : entries) {
        if (e.name.size() > std::numeric_limits<std::uint16_t>::max()) throw UsageError("checkpoint name too long");
        if (e.shape.size() > std::numeric_limits<std::uint8_t>::max()) throw UsageError("checkpoint rank too large");
        if (shape_numel(e.shape) != e.values.size()) {
            throw DimensionError("checkpoint entry '" + e.name + "' shape " + shape_str(e.shape) + " does not match " +
                                 std::to_string(e.values.size()) + " values");
        }
        put<std::uint16_t>(out, static_cast<std::uint16_t>(e.name.size()));
        out += e.name;
        put<std::uint8_t>(out, static_cast<std::uint8_t>(e.shape.size()));
        for (std::size_t d : e.shape) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
        out.append(reinterpret_cast<const char*>(e.values.data()), e.values.size() * sizeof(float));
    }
    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    if (!file) throw IoError("cannot open checkpoint for writing: " + path);
    file.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!file) throw IoError("failed writing checkpoint: " + path);
}

std::vector<NamedArray> read_checkpoint(const std::string& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) throw IoError("cannot open checkpoint: " + path);
    Reader in(std::string(std::istreambuf_iterator<char>(file), {}));

    const std::size_t magic_at = in.pos();
    if (in.get_string(4, "magic") != std::string(kCheckpointMagic, 4)) {
        throw FormatError("not a checkpoint file (bad magic): " + path, magic_at);
    }
    const std::size_t version_at = in.pos();
    const auto version = in.get<std::uint32_t>("version");
    if (version != kCheckpointVersion) {
        throw FormatError("unsupported checkpoint version " + std::to_string(version), version_at);
    }
    const auto count = in.get<std::uint32_t>("entry count");
    std::vector<NamedArray> entries;
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedArray e;
        const auto name_len = in.get<std::uint16_t>("name length");
        e.name = in.get_string(name_len, "name");
        const auto rank = in.get<std::uint8_t>("rank");
        for (std::uint8_t r = 0; r < rank; ++r) e.shape.push_back(in.get<std::uint32_t>("dims"));
        in.get_floats(e.values, shape_numel(e.shape), "values");
        entries.push_back(std::move(e));
    }
    if (!in.done()) throw FormatError("trailing bytes after checkpoint entries", in.pos());
    return entries;
}

const NamedArray* find_array(const std::vector<NamedArray>& entries, const std::string& name) {
    for (const auto& e : entries) {
        if (e.name == name) return &e;
    }
    return nullptr;
}

}  // namespace afd
