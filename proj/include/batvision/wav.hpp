#pragma once

#include <filesystem>
#include <string>

#include "batvision/signal.hpp"

namespace bv {

// Two-channel RIFF/WAVE with 32-bit IEEE float samples. Samples are narrowed to
// float on write; recordings already at float precision round-trip exactly.
// A non-empty `comment` is stored in a LIST/INFO ICMT chunk.
void write_wav(const std::filesystem::path& path, const BinauralRecording& rec,
               const std::string& comment = {});

BinauralRecording read_wav(const std::filesystem::path& path);

// Contents of the ICMT chunk, empty when absent.
std::string read_wav_comment(const std::filesystem::path& path);

}  // namespace bv
