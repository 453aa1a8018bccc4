#include "nucleoforge/array_io.hpp"

#include <bit>
#include <cctype>
#include <fstream>
#include <iterator>
#include <map>
#include <numeric>
#include <optional>
#include <string_view>
#include <variant>

namespace nucleoforge {

static_assert(std::endian::native == std::endian::little,
              "NPY payloads are handled as little-endian in place");

namespace {

constexpr char kMagic[] = "\x93NUMPY";
constexpr std::size_t kMagicLen = 6;
constexpr std::size_t kAlign = 64;

// Python literal subset used by NPY headers: dict of str -> (str | bool | int tuple).
using HeaderValue = std::variant<std::string, bool, std::vector<std::size_t>>;

class HeaderParser {
public:
    explicit HeaderParser(std::string_view s) : s_(s) {}

    std::map<std::string, HeaderValue> parse_dict() {
        std::map<std::string, HeaderValue> out;
        expect('{');
        while (true) {
            skip_ws();
            if (peek() == '}') {
                ++pos_;
                break;
            }
            std::string key = parse_string();
            expect(':');
            out[key] = parse_value();
            skip_ws();
            if (peek() == ',') {
                ++pos_;
                continue;
            }
            expect('}');
            break;
        }
        return out;
    }

private:
    std::string_view s_;
    std::size_t pos_ = 0;

    [[noreturn]] void fail(const std::string& what) const {
        throw FormatError("malformed NPY header: " + what);
    }
    void skip_ws() {
        while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
    }
    char peek() {
        skip_ws();
        if (pos_ >= s_.size()) fail("unexpected end");
        return s_[pos_];
    }
    void expect(char c) {
        if (peek() != c) fail(std::string("expected '") + c + "'");
        ++pos_;
    }
    std::string parse_string() {
        const char q = peek();
        if (q != '\'' && q != '"') fail("expected string");
        ++pos_;
        const auto end = s_.find(q, pos_);
        if (end == std::string_view::npos) fail("unterminated string");
        std::string out(s_.substr(pos_, end - pos_));
        pos_ = end + 1;
        return out;
    }
    std::size_t parse_int() {
        skip_ws();
        std::size_t v = 0;
        const std::size_t start = pos_;
        while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) {
            v = v * 10 + static_cast<std::size_t>(s_[pos_] - '0');
            ++pos_;
        }
        if (pos_ == start) fail("expected integer");
        // tolerate Python 2 style long suffix
        if (pos_ < s_.size() && s_[pos_] == 'L') ++pos_;
        return v;
    }
    HeaderValue parse_value() {
        const char c = peek();
        if (c == '\'' || c == '"') return parse_string();
        if (c == '(') {
            ++pos_;
            std::vector<std::size_t> dims;
            while (true) {
                if (peek() == ')') {
                    ++pos_;
                    break;
                }
                dims.push_back(parse_int());
                if (peek() == ',') {
                    ++pos_;
                    continue;
                }
                expect(')');
                break;
            }
            return dims;
        }
        if (s_.substr(pos_, 4) == "True") {
            pos_ += 4;
            return true;
        }
        if (s_.substr(pos_, 5) == "False") {
            pos_ += 5;
            return false;
        }
        fail("unsupported value");
    }
};

DType parse_descr(const std::string& d) {
    if (d.size() < 2) throw UnsupportedDtypeError("unknown dtype '" + d + "'");
    const char order = d[0];
    const std::string code = d.substr(1);
    const bool single_byte = code == "u1" || code == "b1";
    if (order == '>' && !single_byte)
        throw UnsupportedDtypeError("big-endian dtype '" + d + "' is not supported");
    if (order != '<' && order != '|' && order != '=' && !(order == '>' && single_byte))
        throw UnsupportedDtypeError("unknown dtype '" + d + "'");
    if (code == "u1") return DType::u8;
    if (code == "b1") return DType::boolean;
    if (code == "i4") return DType::i32;
    if (code == "f4") return DType::f32;
    if (code == "f8") return DType::f64;
    throw UnsupportedDtypeError("unsupported dtype '" + d + "'");
}

std::string shape_literal(const std::vector<std::size_t>& shape) {
    std::string s = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ", ";
        s += std::to_string(shape[i]);
    }
    if (shape.size() == 1) s += ",";
    return s + ")";
}

}  // namespace

std::size_t dtype_size(DType d) {
    switch (d) {
        case DType::u8:
        case DType::boolean: return 1;
        case DType::i32:
        case DType::f32: return 4;
        case DType::f64: return 8;
    }
    return 0;
}

const char* dtype_descr(DType d) {
    switch (d) {
        case DType::u8: return "|u1";
        case DType::boolean: return "|b1";
        case DType::i32: return "<i4";
        case DType::f32: return "<f4";
        case DType::f64: return "<f8";
    }
    return "";
}

Tensor::Tensor(DType d, std::vector<std::size_t> s) : dtype(d), shape(std::move(s)) {
    data.resize(size() * dtype_size(dtype));
}

std::size_t Tensor::size() const {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor parse_npy(std::span<const std::byte> bytes) {
    if (bytes.size() < kMagicLen + 4 ||
        std::memcmp(bytes.data(), kMagic, kMagicLen) != 0)
        throw FormatError("missing NPY magic string");
    const auto major = static_cast<unsigned>(bytes[6]);
    std::size_t header_len = 0;
    std::size_t offset = 0;
    const auto u8 = [&](std::size_t i) { return static_cast<std::size_t>(bytes[i]); };
    if (major == 1) {
        header_len = u8(8) | (u8(9) << 8);
        offset = 10;
    } else if (major == 2) {
        if (bytes.size() < 12) throw FormatError("truncated NPY v2 preamble");
        header_len = u8(8) | (u8(9) << 8) | (u8(10) << 16) | (u8(11) << 24);
        offset = 12;
    } else {
        throw FormatError("unsupported NPY version " + std::to_string(major));
    }
    if (bytes.size() < offset + header_len) throw FormatError("truncated NPY header");
    const std::string_view header(reinterpret_cast<const char*>(bytes.data() + offset),
                                  header_len);
    const auto dict = HeaderParser(header).parse_dict();

    const auto field = [&](const char* key) -> const HeaderValue& {
        const auto it = dict.find(key);
        if (it == dict.end()) throw FormatError(std::string("NPY header lacks '") + key + "'");
        return it->second;
    };
    const auto* descr = std::get_if<std::string>(&field("descr"));
    const auto* fortran = std::get_if<bool>(&field("fortran_order"));
    const auto* shape = std::get_if<std::vector<std::size_t>>(&field("shape"));
    if (!descr || !fortran || !shape) throw FormatError("NPY header has mistyped fields");
    if (*fortran) throw UnsupportedLayoutError("fortran-order arrays are not supported");

    Tensor t(parse_descr(*descr), *shape);
    const std::size_t payload = bytes.size() - offset - header_len;
    if (payload != t.data.size())
        throw FormatError("NPY payload is " + std::to_string(payload) + " bytes, expected " +
                          std::to_string(t.data.size()));
    if (!t.data.empty())
        std::memcpy(t.data.data(), bytes.data() + offset + header_len, t.data.size());
    return t;
}

Tensor read_npy(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_npy(std::as_bytes(std::span(raw)));
}

std::vector<std::byte> serialize_npy(const Tensor& t) {
    std::string header = std::string("{'descr': '") + dtype_descr(t.dtype) +
                         "', 'fortran_order': False, 'shape': " + shape_literal(t.shape) +
                         ", }";
    const std::size_t unpadded = 10 + header.size() + 1;
    header.append((kAlign - unpadded % kAlign) % kAlign, ' ');
    header.push_back('\n');
    if (header.size() > 0xFFFF) throw FormatError("NPY header too long for v1.0");

    std::vector<std::byte> out;
    out.reserve(10 + header.size() + t.data.size());
    for (std::size_t i = 0; i < kMagicLen; ++i) out.push_back(static_cast<std::byte>(kMagic[i]));
    out.push_back(std::byte{1});
    out.push_back(std::byte{0});
    out.push_back(static_cast<std::byte>(header.size() & 0xFF));
    out.push_back(static_cast<std::byte>(header.size() >> 8));
    for (char c : header) out.push_back(static_cast<std::byte>(c));
    out.insert(out.end(), t.data.begin(), t.data.end());
    return out;
}

namespace {
void write_bytes(const std::filesystem::path& path, std::span<const std::byte> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed for " + path.string());
}
}  // namespace

void write_npy(const std::filesystem::path& path, const Tensor& t) {
    if (t.data.size() != t.size() * dtype_size(t.dtype))
        throw ShapeError("tensor buffer does not match its shape");
    write_bytes(path, serialize_npy(t));
}

void write_ppm(const std::filesystem::path& path, const Tensor& img) {
    if (img.dtype != DType::u8 || img.rank() != 3 || img.shape[2] != 3)
        throw ShapeError("write_ppm needs a u8 H×W×3 tensor");
    const std::string head = "P6\n" + std::to_string(img.shape[1]) + " " +
                             std::to_string(img.shape[0]) + "\n255\n";
    std::vector<std::byte> bytes;
    bytes.reserve(head.size() + img.data.size());
    for (char c : head) bytes.push_back(static_cast<std::byte>(c));
    bytes.insert(bytes.end(), img.data.begin(), img.data.end());
    write_bytes(path, bytes);
}

void write_ppm(const std::filesystem::path& path, const RgbImage& img) {
    if (img.channels() != 3) throw ShapeError("write_ppm needs 3 channels");
    const auto* p = img.data.data();
    write_ppm(path, Tensor::from_values<std::uint8_t>(
                        {static_cast<std::size_t>(img.height), static_cast<std::size_t>(img.width), 3},
                        std::span(p, static_cast<std::size_t>(img.data.size()))));
}

}  // namespace nucleoforge
