#pragma once

#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gravfarm/error.hpp"
#include "gravfarm/types.hpp"

namespace gravfarm::wire {

enum MsgType : std::uint8_t {
    kRegister = 0x01,
    kRegisterAck = 0x02,
    kHeartbeat = 0x03,
    kTaskSubmit = 0x04,
    kTaskAssign = 0x05,
    kTaskResult = 0x06,
    kTaskError = 0x07,
    kSessionOpen = 0x08,
    kSessionClose = 0x09,
    kServerList = 0x0A,
};

bool known_msg_type(std::uint8_t t);

inline constexpr std::uint8_t kMagic0 = 0x4E;
inline constexpr std::uint8_t kMagic1 = 0x53;
inline constexpr std::uint8_t kVersion = 0x01;
inline constexpr std::size_t kHeaderSize = 8;
inline constexpr std::size_t kMaxPayload = 256u << 20;  // 256 MiB

// Frame: magic(2) version(1) type(1) payload_len(u32 big-endian) payload.
std::vector<std::uint8_t> encode_message(std::uint8_t msg_type, std::span<const std::uint8_t> payload);
std::pair<std::uint8_t, std::vector<std::uint8_t>> decode_message(std::span<const std::uint8_t> frame);

// Header-only parse for stream reads; validates magic/version/type/size.
std::pair<std::uint8_t, std::uint32_t> decode_header(std::span<const std::uint8_t, kHeaderSize> header);

// Payload fields are little-endian; only the frame header is big-endian.
class Writer {
public:
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u16(std::uint16_t v);
    void u32(std::uint32_t v);
    void u64(std::uint64_t v);
    void f64(double v);
    void bytes(std::span<const std::uint8_t> b) { buf_.insert(buf_.end(), b.begin(), b.end()); }
    void str(const std::string& s);
    void vec3(const Vec3& v) { f64(v.x); f64(v.y); f64(v.z); }
    void body(const Body& b);
    // bulk little-endian doubles, memcpy'd on little-endian hosts
    void f64_block(const double* values, std::size_t count);

    void reserve(std::size_t n) { buf_.reserve(buf_.size() + n); }
    std::vector<std::uint8_t> take() { return std::move(buf_); }
    std::size_t size() const { return buf_.size(); }

private:
    std::vector<std::uint8_t> buf_;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> data, Err underrun = Err::MalformedTask)
        : data_(data), underrun_(underrun) {}

    std::uint8_t u8();
    std::uint16_t u16();
    std::uint32_t u32();
    std::uint64_t u64();
    double f64();
    std::string str();
    Vec3 vec3();
    Body body();
    void f64_block(double* out, std::size_t count);

    bool done() const { return off_ == data_.size(); }
    std::size_t remaining() const { return data_.size() - off_; }

private:
    void need(std::size_t n);

    std::span<const std::uint8_t> data_;
    std::size_t off_ = 0;
    Err underrun_;
};

}  // namespace gravfarm::wire
