#include "capsed/audio/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "capsed/common.hpp"

namespace capsed {

namespace {

template <typename T>
T read_le(std::istream& in, const std::string& path) {
    unsigned char buf[sizeof(T)];
    if (!in.read(reinterpret_cast<char*>(buf), sizeof(T)))
        throw DataError(path + ": truncated WAV file");
    std::uint64_t v = 0;
    for (size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return static_cast<T>(v);
}

template <typename T>
void write_le(std::ostream& out, T v) {
    unsigned char buf[sizeof(T)];
    const std::uint64_t u = static_cast<std::uint64_t>(static_cast<std::make_unsigned_t<T>>(v));
    for (size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>((u >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

}  // namespace

WavData load_wav(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(path + ": cannot open");

    char riff[4], wave[4];
    if (!in.read(riff, 4)) throw DataError(path + ": not a RIFF file");
    read_le<std::uint32_t>(in, path);  // riff size
    if (!in.read(wave, 4)) throw DataError(path + ": truncated header");
    if (std::memcmp(riff, "RIFF", 4) != 0 || std::memcmp(wave, "WAVE", 4) != 0)
        throw DataError(path + ": not a RIFF/WAVE file");

    std::uint16_t format = 0, channels = 0, bits = 0;
    std::uint32_t sample_rate = 0;
    bool have_fmt = false;
    std::vector<std::int16_t> samples;

    while (in) {
        char id[4];
        if (!in.read(id, 4)) break;
        const std::uint32_t size = read_le<std::uint32_t>(in, path);
        if (std::memcmp(id, "fmt ", 4) == 0) {
            format = read_le<std::uint16_t>(in, path);
            channels = read_le<std::uint16_t>(in, path);
            sample_rate = read_le<std::uint32_t>(in, path);
            read_le<std::uint32_t>(in, path);  // byte rate
            read_le<std::uint16_t>(in, path);  // block align
            bits = read_le<std::uint16_t>(in, path);
            if (size > 16) in.seekg(size - 16, std::ios::cur);
            have_fmt = true;
        } else if (std::memcmp(id, "data", 4) == 0) {
            if (!have_fmt) throw DataError(path + ": data chunk before fmt chunk");
            if (format != 1) throw DataError(path + ": unsupported encoding (PCM only)");
            if (bits != 16) throw DataError(path + ": unsupported sample width " +
                                            std::to_string(bits) + " (16-bit PCM only)");
            if (channels < 1 || channels > 2)
                throw DataError(path + ": unsupported channel count " + std::to_string(channels));
            const size_t n = size / 2;
            samples.resize(n);
            if (!in.read(reinterpret_cast<char*>(samples.data()),
                         static_cast<std::streamsize>(n * 2)))
                throw DataError(path + ": truncated data chunk");
            if (size % 2) in.seekg(1, std::ios::cur);
        } else {
            in.seekg(size + (size % 2), std::ios::cur);  // chunks are word-aligned
        }
    }
    if (!have_fmt) throw DataError(path + ": missing fmt chunk");

    WavData wav;
    wav.sample_rate = static_cast<int>(sample_rate);
    const size_t frames = samples.size() / channels;
    wav.channels.assign(channels, std::vector<double>(frames));
    for (size_t f = 0; f < frames; ++f)
        for (std::uint16_t c = 0; c < channels; ++c)
            wav.channels[c][f] = static_cast<double>(samples[f * channels + c]) / 32768.0;
    return wav;
}

void write_wav16(const std::string& path, const std::vector<std::vector<double>>& channels,
                 int sample_rate) {
    if (channels.empty() || channels.size() > 2)
        throw DataError(path + ": writer supports 1 or 2 channels");
    const size_t frames = channels[0].size();
    for (const auto& ch : channels)
        if (ch.size() != frames) throw DataError(path + ": channel length mismatch");

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError(path + ": cannot open for writing");

    const std::uint16_t nch = static_cast<std::uint16_t>(channels.size());
    const std::uint32_t data_bytes = static_cast<std::uint32_t>(frames * nch * 2);
    out.write("RIFF", 4);
    write_le<std::uint32_t>(out, 36 + data_bytes);
    out.write("WAVE", 4);
    out.write("fmt ", 4);
    write_le<std::uint32_t>(out, 16);
    write_le<std::uint16_t>(out, 1);  // PCM
    write_le<std::uint16_t>(out, nch);
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(sample_rate));
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(sample_rate) * nch * 2);
    write_le<std::uint16_t>(out, static_cast<std::uint16_t>(nch * 2));
    write_le<std::uint16_t>(out, 16);
    out.write("data", 4);
    write_le<std::uint32_t>(out, data_bytes);
    for (size_t f = 0; f < frames; ++f) {
        for (std::uint16_t c = 0; c < nch; ++c) {
            const double x = std::clamp(channels[c][f], -1.0, 32767.0 / 32768.0);
            const long q = std::lround(x * 32768.0);
            write_le<std::int16_t>(out, static_cast<std::int16_t>(std::clamp(q, -32768L, 32767L)));
        }
    }
    if (!out) throw DataError(path + ": write failed");
}

}  // namespace capsed
