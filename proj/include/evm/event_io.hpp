#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "evm/common.hpp"

namespace evm {

// One sensor event: timestamp in integer microseconds since the stream epoch,
// pixel coordinates, polarity +1/-1.
struct Event {
    std::int64_t t_us = 0;
    std::uint16_t x = 0;
    std::uint16_t y = 0;
    std::int8_t p = 1;

    friend bool operator==(const Event&, const Event&) = default;
};

// Time-ordered event list with the sensor resolution and the observed time
// span (t_start/t_end are min/max timestamp; 0/0 when empty).
struct EventStream {
    std::vector<Event> events;
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    std::int64_t t_start = 0;
    std::int64_t t_end = 0;

    std::size_t size() const { return events.size(); }
    std::int64_t span_us() const { return t_end - t_start; }
    double span_s() const { return us_to_s(span_us()); }

    // Recomputes t_start/t_end from the event list.
    void refresh_span();
};

// Parses `t_us,x,y,p` lines (p in {0,1}; 0 maps to -1, 1 to +1). Lines
// starting with '#' and blank lines are skipped. Events are stably re-sorted
// by timestamp if needed. Throws ParseError on malformed lines and DataError
// on out-of-bounds coordinates.
EventStream parse_text(std::istream& in, std::uint32_t width, std::uint32_t height);

// Emits the same text format, one event per line.
void write_text(const EventStream& stream, std::ostream& out);

// Binary layout (little-endian): magic "EVS1", u32 width, u32 height,
// u64 count, then count 16-byte records {u64 t_us, u16 x, u16 y, i8 p,
// u8 pad, 2 zero bytes}. Records are padded to 16 bytes.
EventStream read_binary(std::istream& in);
void write_binary(const EventStream& stream, std::ostream& out);

// File helpers: ".evs" selects the binary format, everything else text
// (text loading requires a resolution).
EventStream load_events(const std::string& path, std::uint32_t width = 0, std::uint32_t height = 0);
void save_events(const EventStream& stream, const std::string& path);

// Events with t0 <= t < t1, order preserved. Throws std::invalid_argument if
// t0 > t1.
EventStream window(const EventStream& stream, std::int64_t t0, std::int64_t t1);

}  // namespace evm
