#include "evm/event_io.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace evm {

namespace {

constexpr char kMagic[4] = {'E', 'V', 'S', '1'};
constexpr std::size_t kRecordSize = 16;

void check_bounds(std::int64_t x, std::int64_t y, std::uint32_t w, std::uint32_t h,
                  std::size_t line) {
    if (x < 0 || x >= static_cast<std::int64_t>(w) || y < 0 || y >= static_cast<std::int64_t>(h)) {
        throw DataError("event coordinate (" + std::to_string(x) + "," + std::to_string(y) +
                        ") outside " + std::to_string(w) + "x" + std::to_string(h) + " (line " +
                        std::to_string(line) + ")");
    }
}

std::int64_t parse_int(std::string_view field, std::size_t line) {
    std::int64_t value = 0;
    const char* first = field.data();
    const char* last = field.data() + field.size();
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc() || ptr != last) {
        throw ParseError("malformed integer field '" + std::string(field) + "'", line);
    }
    return value;
}

template <typename T>
void put_le(std::string& buf, T value) {
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        buf.push_back(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xff));
    }
}

template <typename T>
T get_le(const unsigned char* p) {
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    }
    return static_cast<T>(v);
}

}  // namespace

void EventStream::refresh_span() {
    if (events.empty()) {
        t_start = t_end = 0;
        return;
    }
    t_start = events.front().t_us;
    t_end = events.back().t_us;
    for (const Event& e : events) {
        t_start = std::min(t_start, e.t_us);
        t_end = std::max(t_end, e.t_us);
    }
}

EventStream parse_text(std::istream& in, std::uint32_t width, std::uint32_t height) {
    EventStream stream;
    stream.width = width;
    stream.height = height;

    std::string line;
    std::size_t line_no = 0;
    bool sorted = true;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::string_view view(line);
        while (!view.empty() && (view.front() == ' ' || view.front() == '\t')) view.remove_prefix(1);
        if (view.empty() || view.front() == '#') continue;

        std::array<std::string_view, 4> fields;
        std::size_t n_fields = 0, start = 0;
        for (std::size_t i = 0; i <= view.size(); ++i) {
            if (i == view.size() || view[i] == ',') {
                if (n_fields >= 4) throw ParseError("expected 4 comma-separated fields", line_no);
                fields[n_fields++] = view.substr(start, i - start);
                start = i + 1;
            }
        }
        if (n_fields != 4) throw ParseError("expected 4 comma-separated fields", line_no);

        std::int64_t t = parse_int(fields[0], line_no);
        std::int64_t x = parse_int(fields[1], line_no);
        std::int64_t y = parse_int(fields[2], line_no);
        std::int64_t p = parse_int(fields[3], line_no);
        if (p != 0 && p != 1) throw ParseError("polarity must be 0 or 1", line_no);
        check_bounds(x, y, width, height, line_no);

        if (!stream.events.empty() && t < stream.events.back().t_us) sorted = false;
        stream.events.push_back(Event{t, static_cast<std::uint16_t>(x),
                                      static_cast<std::uint16_t>(y),
                                      static_cast<std::int8_t>(p == 1 ? 1 : -1)});
    }
    if (!sorted) {
        std::stable_sort(stream.events.begin(), stream.events.end(),
                         [](const Event& a, const Event& b) { return a.t_us < b.t_us; });
    }
    stream.refresh_span();
    return stream;
}

void write_text(const EventStream& stream, std::ostream& out) {
    out << "# t_us,x,y,p\n";
    for (const Event& e : stream.events) {
        out << e.t_us << ',' << e.x << ',' << e.y << ',' << (e.p > 0 ? 1 : 0) << '\n';
    }
}

void write_binary(const EventStream& stream, std::ostream& out) {
    std::string buf;
    buf.reserve(20 + kRecordSize * stream.events.size());
    buf.append(kMagic, 4);
    put_le<std::uint32_t>(buf, stream.width);
    put_le<std::uint32_t>(buf, stream.height);
    put_le<std::uint64_t>(buf, stream.events.size());
    for (const Event& e : stream.events) {
        put_le<std::uint64_t>(buf, static_cast<std::uint64_t>(e.t_us));
        put_le<std::uint16_t>(buf, e.x);
        put_le<std::uint16_t>(buf, e.y);
        buf.push_back(static_cast<char>(e.p));
        buf.push_back('\0');  // pad
        buf.push_back('\0');
        buf.push_back('\0');
    }
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw DataError("failed writing event binary");
}

EventStream read_binary(std::istream& in) {
    std::array<unsigned char, 20> header;
    in.read(reinterpret_cast<char*>(header.data()), header.size());
    if (in.gcount() != static_cast<std::streamsize>(header.size()) ||
        std::memcmp(header.data(), kMagic, 4) != 0) {
        throw DataError("bad event binary magic");
    }
    EventStream stream;
    stream.width = get_le<std::uint32_t>(header.data() + 4);
    stream.height = get_le<std::uint32_t>(header.data() + 8);
    std::uint64_t count = get_le<std::uint64_t>(header.data() + 12);

    stream.events.reserve(count);
    std::array<unsigned char, kRecordSize> rec;
    for (std::uint64_t i = 0; i < count; ++i) {
        in.read(reinterpret_cast<char*>(rec.data()), rec.size());
        if (in.gcount() != static_cast<std::streamsize>(rec.size())) {
            throw DataError("truncated event record " + std::to_string(i));
        }
        Event e;
        e.t_us = static_cast<std::int64_t>(get_le<std::uint64_t>(rec.data()));
        e.x = get_le<std::uint16_t>(rec.data() + 8);
        e.y = get_le<std::uint16_t>(rec.data() + 10);
        e.p = static_cast<std::int8_t>(rec[12]);
        if (e.p != 1 && e.p != -1) {
            throw DataError("invalid polarity in record " + std::to_string(i));
        }
        check_bounds(e.x, e.y, stream.width, stream.height, i);
        stream.events.push_back(e);
    }
    stream.refresh_span();
    return stream;
}

EventStream load_events(const std::string& path, std::uint32_t width, std::uint32_t height) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    if (path.size() >= 4 && path.compare(path.size() - 4, 4, ".evs") == 0) {
        return read_binary(in);
    }
    if (width == 0 || height == 0) {
        throw std::invalid_argument("text event input needs a resolution");
    }
    return parse_text(in, width, height);
}

void save_events(const EventStream& stream, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open " + path + " for writing");
    if (path.size() >= 4 && path.compare(path.size() - 4, 4, ".evs") == 0) {
        write_binary(stream, out);
    } else {
        write_text(stream, out);
    }
}

EventStream window(const EventStream& stream, std::int64_t t0, std::int64_t t1) {
    if (t0 > t1) throw std::invalid_argument("window with t0 > t1");
    EventStream out;
    out.width = stream.width;
    out.height = stream.height;
    for (const Event& e : stream.events) {
        if (e.t_us >= t0 && e.t_us < t1) out.events.push_back(e);
    }
    out.refresh_span();
    return out;
}

}  // namespace evm
