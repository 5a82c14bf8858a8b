#pragma once

#include <string>
#include <vector>

namespace capsed {

// Decoded PCM audio, one vector per channel, samples in [-1, 1].
struct WavData {
    std::vector<std::vector<double>> channels;
    int sample_rate = 0;

    size_t n_channels() const { return channels.size(); }
    size_t n_samples() const { return channels.empty() ? 0 : channels[0].size(); }
};

// Reads a RIFF WAVE file. Only PCM 16-bit, 1 or 2 channels is accepted;
// anything else is a DataError (no silent conversion). Samples are scaled
// by 1/32768.
WavData load_wav(const std::string& path);

// Writes PCM 16-bit; samples clipped to [-1, 1) and scaled by 32768.
void write_wav16(const std::string& path, const std::vector<std::vector<double>>& channels,
                 int sample_rate);

}  // namespace capsed
