#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tagasc/errors.hpp"
#include "tagasc/rng.hpp"

namespace tagasc {

// One audio recording, samples interleaved row-major [N, channels] and
// normalized to [-1, 1] (16-bit scale).
struct Recording {
    std::vector<double> samples;
    std::size_t num_samples = 0;
    std::size_t channels = 1;
    std::size_t sample_rate = 48000;
    std::string id;
    std::optional<std::size_t> scene_label;

    double at(std::size_t n, std::size_t c) const { return samples[n * channels + c]; }
};

// Per-recording sound-event posteriors, every entry in [0, 1].
struct TagVector {
    std::vector<double> values;
    std::string source_id;
};

// id -> tag vector; all vectors share one length c.
struct TagTable {
    std::map<std::string, TagVector> entries;
    std::size_t tag_dim = 0;

    const TagVector* find(const std::string& id) const {
        auto it = entries.find(id);
        return it == entries.end() ? nullptr : &it->second;
    }
};

// RIFF/WAVE PCM16 reader. 1-2 channels; unknown chunks are skipped; parse
// failures cite the byte offset.
Recording parse_wav(const std::vector<std::uint8_t>& bytes);
Recording read_wav_file(const std::string& path);

// PCM16 little-endian writer, the exact inverse of parse_wav on samples
// that are multiples of 1/32768.
std::vector<std::uint8_t> write_wav(const Recording& rec);
void write_wav_file(const std::string& path, const Recording& rec);

// y[n] = x[n+1] - beta * x[n]; drops the first sample (480000 -> 479999).
Recording pre_emphasis(const Recording& rec, double beta = 0.97);

struct MixupResult {
    std::vector<double> samples;  // same layout as the inputs
    std::vector<double> soft_label;
    std::vector<double> mixed_tag;  // empty when no tags given
    double lambda = 1.0;
};

// Convex combination with a fixed lambda; tags (when present) mix with the
// same coefficient as the waveforms.
MixupResult mixup_with_lambda(const Recording& a, std::size_t label_a, const Recording& b,
                              std::size_t label_b, std::size_t num_classes, double lambda,
                              const std::vector<double>* tag_a = nullptr,
                              const std::vector<double>* tag_b = nullptr);

// lambda ~ Beta(alpha, alpha) drawn from rng.
MixupResult mixup(const Recording& a, std::size_t label_a, const Recording& b,
                  std::size_t label_b, std::size_t num_classes, double alpha, Rng& rng,
                  const std::vector<double>* tag_a = nullptr,
                  const std::vector<double>* tag_b = nullptr);

// "filename<sep>scene_label" lines, separator auto-detected between tab and
// comma. Errors cite line numbers; duplicate ids are rejected.
std::vector<std::pair<std::string, std::string>> load_metadata(const std::string& path);

// "id v1 v2 ... vc" lines, whitespace separated; values must be in [0, 1].
TagTable load_tags(const std::string& path);

void save_metadata(const std::string& path,
                   const std::vector<std::pair<std::string, std::string>>& rows);
void save_tags(const std::string& path, const TagTable& tags);

// Synthetic scene/event dataset: each scene class has a distinct set of
// characteristic events; recordings are noise plus sinusoid bursts for the
// events that occur, and tags are the (optionally blurred) occurrences.
struct SynthSpec {
    std::size_t num_scenes = 4;
    std::size_t num_event_types = 8;  // c
    std::size_t train_per_scene = 50;
    std::size_t test_per_scene = 25;
    std::size_t duration_samples = 9600;
    std::size_t sample_rate = 48000;
    std::size_t char_events_per_scene = 2;
    double char_prob = 0.9;        // P(characteristic event occurs)
    double background_prob = 0.1;  // P(non-characteristic event occurs)
    double event_amplitude = 0.08;
    double noise_level = 0.35;
    double tag_blur = 0.15;  // bounded in [0, 0.49]
    std::uint64_t seed = 7;

    void validate() const;
};

struct SynthDataset {
    std::vector<Recording> train;
    std::vector<Recording> test;
    TagTable tags;
    std::vector<std::string> class_names;
    // Ground-truth occurrence per recording id (before tag blur).
    std::map<std::string, std::vector<int>> event_truth;
};

SynthDataset generate_synthetic(const SynthSpec& spec);

// Characteristic event indices for one scene under `spec`.
std::vector<std::size_t> synth_scene_profile(const SynthSpec& spec, std::size_t scene);

// key=value file for SynthSpec (unknown keys rejected).
SynthSpec load_synth_spec(const std::string& path);

// Writes WAVs under <dir>/audio plus train_metadata.txt, test_metadata.txt
// and tags.txt in the formats above.
void write_synth_dataset(const std::string& dir, const SynthDataset& ds);

}  // namespace tagasc
