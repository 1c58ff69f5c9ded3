#include "msmbd/embedding_io.hpp"

#include "msmbd/error.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <vector>

namespace msmbd {

namespace {

constexpr std::array<char, 4> kMagic{'M', 'S', 'M', 'B'};

template <typename U>
void put_le(std::vector<unsigned char>& buf, U v)
{
    for (std::size_t i = 0; i < sizeof(U); ++i) {
        buf.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xffu));
    }
}

template <typename U>
U get_le(const unsigned char* p)
{
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
        v |= static_cast<U>(p[i]) << (8 * i);
    }
    return v;
}

void read_exact(std::istream& in, unsigned char* dst, std::size_t n, const std::string& context, const char* field)
{
    in.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n) {
        throw FormatError(context + ": truncated " + field);
    }
}

} // namespace

void write_tensor_block(std::ostream& out, const Tensor& t, TensorDtype dtype)
{
    if (t.rank() != 1 && t.rank() != 2) {
        throw DimensionError("write_tensor_block: expected rank 1 or 2, got " + shape_str(t.shape()));
    }
    const std::size_t rows = t.rows();
    const std::size_t cols = t.cols();
    if (rows > std::numeric_limits<std::uint32_t>::max() || cols > std::numeric_limits<std::uint32_t>::max()) {
        throw DimensionError("write_tensor_block: dimension exceeds u32");
    }
    std::vector<unsigned char> buf;
    buf.reserve(16 + t.size() * 8);
    buf.insert(buf.end(), kMagic.begin(), kMagic.end());
    put_le<std::uint16_t>(buf, kTensorBlockVersion);
    buf.push_back(static_cast<unsigned char>(dtype));
    buf.push_back(0);
    put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(rows));
    put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(cols));
    for (double v : t.data()) {
        if (dtype == TensorDtype::float32) {
            if (!std::isfinite(static_cast<float>(v))) {
                throw NumericError("write_tensor_block: value not representable as float32");
            }
            put_le<std::uint32_t>(buf, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
        } else {
            put_le<std::uint64_t>(buf, std::bit_cast<std::uint64_t>(v));
        }
    }
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out) {
        throw FormatError("write_tensor_block: I/O failure");
    }
}

Tensor read_tensor_block(std::istream& in, TensorDtype expected, const std::string& context)
{
    std::array<unsigned char, 16> header{};
    read_exact(in, header.data(), 4, context, "magic");
    if (std::memcmp(header.data(), kMagic.data(), 4) != 0) {
        throw FormatError(context + ": bad magic (expected \"MSMB\")");
    }
    read_exact(in, header.data() + 4, 12, context, "header");
    const auto version = get_le<std::uint16_t>(header.data() + 4);
    if (version != kTensorBlockVersion) {
        throw FormatError(context + ": unsupported version " + std::to_string(version));
    }
    const auto dtype = header[6];
    if (dtype != static_cast<unsigned char>(expected)) {
        throw FormatError(context + ": unexpected dtype " + std::to_string(dtype));
    }
    if (header[7] != 0) {
        throw FormatError(context + ": reserved byte must be 0");
    }
    const auto rows = get_le<std::uint32_t>(header.data() + 8);
    const auto cols = get_le<std::uint32_t>(header.data() + 12);
    if (rows == 0) {
        throw FormatError(context + ": rows must be positive");
    }
    if (cols == 0) {
        throw FormatError(context + ": cols must be positive");
    }
    const std::size_t width = expected == TensorDtype::float32 ? 4 : 8;
    const std::size_t count = static_cast<std::size_t>(rows) * cols;
    std::vector<unsigned char> payload(count * width);
    read_exact(in, payload.data(), payload.size(), context, "payload");
    std::vector<double> values(count);
    for (std::size_t i = 0; i < count; ++i) {
        const unsigned char* p = payload.data() + i * width;
        values[i] = width == 4 ? static_cast<double>(std::bit_cast<float>(get_le<std::uint32_t>(p)))
                               : std::bit_cast<double>(get_le<std::uint64_t>(p));
    }
    Tensor t({rows, cols}, std::move(values));
    if (!t.all_finite()) {
        throw FormatError(context + ": payload contains non-finite values");
    }
    return t;
}

void write_embedding_file(const std::filesystem::path& path, const Tensor& t)
{
    if (t.rank() != 2) {
        throw DimensionError("write_embedding_file: expected a 2-D tensor, got " + shape_str(t.shape()));
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw FormatError("cannot open " + path.string() + " for writing");
    }
    write_tensor_block(out, t, TensorDtype::float32);
}

Tensor load_embedding_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError("cannot open embedding file " + path.string());
    }
    Tensor t = read_tensor_block(in, TensorDtype::float32, path.string());
    if (in.peek() != std::char_traits<char>::eof()) {
        throw FormatError(path.string() + ": trailing bytes after payload");
    }
    return t;
}

} // namespace msmbd
