#include "gravfarm/wire.hpp"

#include <bit>
#include <cstring>

namespace gravfarm::wire {

namespace {
constexpr bool kLittleEndian = std::endian::native == std::endian::little;
}

bool known_msg_type(std::uint8_t t) { return t >= kRegister && t <= kServerList; }

std::vector<std::uint8_t> encode_message(std::uint8_t msg_type, std::span<const std::uint8_t> payload) {
    if (!known_msg_type(msg_type)) fail(Err::UnknownType, "msg_type " + std::to_string(msg_type));
    if (payload.size() > kMaxPayload) fail(Err::PayloadTooLarge, std::to_string(payload.size()) + " bytes");
    std::vector<std::uint8_t> frame;
    frame.reserve(kHeaderSize + payload.size());
    frame.push_back(kMagic0);
    frame.push_back(kMagic1);
    frame.push_back(kVersion);
    frame.push_back(msg_type);
    auto len = static_cast<std::uint32_t>(payload.size());
    frame.push_back(static_cast<std::uint8_t>(len >> 24));
    frame.push_back(static_cast<std::uint8_t>(len >> 16));
    frame.push_back(static_cast<std::uint8_t>(len >> 8));
    frame.push_back(static_cast<std::uint8_t>(len));
    frame.insert(frame.end(), payload.begin(), payload.end());
    return frame;
}

std::pair<std::uint8_t, std::uint32_t> decode_header(std::span<const std::uint8_t, kHeaderSize> h) {
    if (h[0] != kMagic0 || h[1] != kMagic1) fail(Err::BadMagic, "bad frame magic");
    if (h[2] != kVersion) fail(Err::UnsupportedVersion, "version " + std::to_string(h[2]));
    if (!known_msg_type(h[3])) fail(Err::UnknownType, "msg_type " + std::to_string(h[3]));
    std::uint32_t len = (std::uint32_t(h[4]) << 24) | (std::uint32_t(h[5]) << 16) |
                        (std::uint32_t(h[6]) << 8) | std::uint32_t(h[7]);
    if (len > kMaxPayload) fail(Err::PayloadTooLarge, std::to_string(len) + " bytes");
    return {h[3], len};
}

std::pair<std::uint8_t, std::vector<std::uint8_t>> decode_message(std::span<const std::uint8_t> frame) {
    if (frame.size() < kHeaderSize) fail(Err::TruncatedFrame, "frame shorter than header");
    auto [type, len] = decode_header(frame.first<kHeaderSize>());
    if (frame.size() - kHeaderSize < len) fail(Err::TruncatedFrame, "payload shorter than declared");
    if (frame.size() - kHeaderSize > len) fail(Err::TruncatedFrame, "trailing bytes after payload");
    return {type, std::vector<std::uint8_t>(frame.begin() + kHeaderSize, frame.end())};
}

void Writer::u16(std::uint16_t v) {
    buf_.push_back(static_cast<std::uint8_t>(v));
    buf_.push_back(static_cast<std::uint8_t>(v >> 8));
}

void Writer::u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void Writer::u64(std::uint64_t v) {
    if constexpr (kLittleEndian) {
        std::uint8_t b[8];
        std::memcpy(b, &v, 8);
        buf_.insert(buf_.end(), b, b + 8);
    } else {
        for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
}

void Writer::f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    u64(bits);
}

void Writer::f64_block(const double* values, std::size_t count) {
    if constexpr (kLittleEndian) {
        const auto* raw = reinterpret_cast<const std::uint8_t*>(values);
        buf_.insert(buf_.end(), raw, raw + 8 * count);
    } else {
        for (std::size_t i = 0; i < count; ++i) f64(values[i]);
    }
}

void Writer::str(const std::string& s) {
    u16(static_cast<std::uint16_t>(s.size()));
    buf_.insert(buf_.end(), s.begin(), s.end());
}

void Writer::body(const Body& b) {
    u64(b.id);
    f64(b.mass);
    vec3(b.pos);
    vec3(b.vel);
}

void Reader::need(std::size_t n) {
    if (data_.size() - off_ < n) fail(underrun_, "payload underrun");
}

std::uint8_t Reader::u8() {
    need(1);
    return data_[off_++];
}

std::uint16_t Reader::u16() {
    need(2);
    std::uint16_t v = std::uint16_t(data_[off_]) | (std::uint16_t(data_[off_ + 1]) << 8);
    off_ += 2;
    return v;
}

std::uint32_t Reader::u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(data_[off_ + i]) << (8 * i);
    off_ += 4;
    return v;
}

std::uint64_t Reader::u64() {
    need(8);
    std::uint64_t v = 0;
    if constexpr (kLittleEndian) {
        std::memcpy(&v, data_.data() + off_, 8);
    } else {
        for (int i = 0; i < 8; ++i) v |= std::uint64_t(data_[off_ + i]) << (8 * i);
    }
    off_ += 8;
    return v;
}

void Reader::f64_block(double* out, std::size_t count) {
    need(8 * count);
    if constexpr (kLittleEndian) {
        std::memcpy(out, data_.data() + off_, 8 * count);
        off_ += 8 * count;
    } else {
        for (std::size_t i = 0; i < count; ++i) out[i] = f64();
    }
}

double Reader::f64() {
    std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
}

std::string Reader::str() {
    std::size_t n = u16();
    need(n);
    std::string s(reinterpret_cast<const char*>(data_.data() + off_), n);
    off_ += n;
    return s;
}

Vec3 Reader::vec3() {
    Vec3 v;
    v.x = f64();
    v.y = f64();
    v.z = f64();
    return v;
}

Body Reader::body() {
    Body b;
    b.id = u64();
    b.mass = f64();
    b.pos = vec3();
    b.vel = vec3();
    return b;
}

}  // namespace gravfarm::wire
