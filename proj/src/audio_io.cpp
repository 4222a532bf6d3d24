#include "tagasc/audio_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

namespace tagasc {

namespace {

std::uint32_t read_u32(const std::vector<std::uint8_t>& b, std::size_t off) {
    return static_cast<std::uint32_t>(b[off]) | static_cast<std::uint32_t>(b[off + 1]) << 8 |
           static_cast<std::uint32_t>(b[off + 2]) << 16 |
           static_cast<std::uint32_t>(b[off + 3]) << 24;
}

std::uint16_t read_u16(const std::vector<std::uint8_t>& b, std::size_t off) {
    return static_cast<std::uint16_t>(b[off] | b[off + 1] << 8);
}

void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
    b.push_back(static_cast<std::uint8_t>(v & 0xff));
    b.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
    b.push_back(static_cast<std::uint8_t>((v >> 16) & 0xff));
    b.push_back(static_cast<std::uint8_t>((v >> 24) & 0xff));
}

void put_u16(std::vector<std::uint8_t>& b, std::uint16_t v) {
    b.push_back(static_cast<std::uint8_t>(v & 0xff));
    b.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
}

[[noreturn]] void parse_fail(std::size_t offset, const std::string& what) {
    throw ParseError("wav: " + what + " (byte offset " + std::to_string(offset) + ")");
}

}  // namespace

Recording parse_wav(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 12) parse_fail(0, "file shorter than RIFF header");
    if (std::memcmp(bytes.data(), "RIFF", 4) != 0) parse_fail(0, "missing RIFF magic");
    if (std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) parse_fail(8, "missing WAVE form type");

    bool have_fmt = false;
    std::uint16_t channels = 0, bits = 0, format = 0;
    std::uint32_t rate = 0;
    std::size_t data_off = 0, data_len = 0;

    std::size_t off = 12;
    while (off + 8 <= bytes.size()) {
        char id[5] = {0};
        std::memcpy(id, bytes.data() + off, 4);
        const std::uint32_t len = read_u32(bytes, off + 4);
        const std::size_t body = off + 8;
        if (std::memcmp(id, "fmt ", 4) == 0) {
            if (body + 16 > bytes.size()) parse_fail(off, "truncated fmt chunk");
            format = read_u16(bytes, body);
            channels = read_u16(bytes, body + 2);
            rate = read_u32(bytes, body + 4);
            bits = read_u16(bytes, body + 14);
            have_fmt = true;
        } else if (std::memcmp(id, "data", 4) == 0) {
            data_off = body;
            data_len = len;
            if (body + len > bytes.size()) parse_fail(off, "truncated data chunk");
        }
        // other chunks (LIST, fact, ...) are skipped
        off = body + len + (len & 1);  // chunks are word-aligned
    }

    if (!have_fmt) parse_fail(12, "no fmt chunk");
    if (data_off == 0) parse_fail(12, "no data chunk");
    if (format != 1) parse_fail(data_off, "unsupported codec: only PCM (format 1) is supported");
    if (bits != 16) parse_fail(data_off, "unsupported codec: only 16-bit samples are supported");
    if (channels < 1 || channels > 2) {
        parse_fail(data_off, "unsupported codec: " + std::to_string(channels) +
                                 " channels (want 1 or 2)");
    }
    if (data_len % (2 * channels) != 0) parse_fail(data_off, "data chunk not frame-aligned");

    Recording rec;
    rec.channels = channels;
    rec.sample_rate = rate;
    rec.num_samples = data_len / (2 * channels);
    rec.samples.resize(rec.num_samples * channels);
    for (std::size_t i = 0; i < rec.samples.size(); ++i) {
        const std::size_t p = data_off + 2 * i;
        const std::int16_t v = static_cast<std::int16_t>(bytes[p] | bytes[p + 1] << 8);
        rec.samples[i] = static_cast<double>(v) / 32768.0;
    }
    return rec;
}

Recording read_wav_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open wav file: " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    auto rec = parse_wav(bytes);
    rec.id = path;
    return rec;
}

std::vector<std::uint8_t> write_wav(const Recording& rec) {
    if (rec.channels < 1 || rec.channels > 2) throw DataError("write_wav: 1 or 2 channels only");
    const std::uint32_t data_len = static_cast<std::uint32_t>(rec.samples.size() * 2);
    std::vector<std::uint8_t> b;
    b.reserve(44 + data_len);
    b.insert(b.end(), {'R', 'I', 'F', 'F'});
    put_u32(b, 36 + data_len);
    b.insert(b.end(), {'W', 'A', 'V', 'E'});
    b.insert(b.end(), {'f', 'm', 't', ' '});
    put_u32(b, 16);
    put_u16(b, 1);  // PCM
    put_u16(b, static_cast<std::uint16_t>(rec.channels));
    put_u32(b, static_cast<std::uint32_t>(rec.sample_rate));
    const std::uint32_t byte_rate =
        static_cast<std::uint32_t>(rec.sample_rate * rec.channels * 2);
    put_u32(b, byte_rate);
    put_u16(b, static_cast<std::uint16_t>(rec.channels * 2));
    put_u16(b, 16);
    b.insert(b.end(), {'d', 'a', 't', 'a'});
    put_u32(b, data_len);
    for (double s : rec.samples) {
        const double clamped = std::clamp(s, -1.0, 32767.0 / 32768.0);
        const auto v = static_cast<std::int16_t>(std::lround(clamped * 32768.0));
        put_u16(b, static_cast<std::uint16_t>(v));
    }
    return b;
}

void write_wav_file(const std::string& path, const Recording& rec) {
    const auto bytes = write_wav(rec);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write wav file: " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
}

Recording pre_emphasis(const Recording& rec, double beta) {
    if (rec.num_samples < 2) throw DimensionError("pre_emphasis: need at least 2 samples");
    if (!(beta >= 0.0 && beta < 1.0)) throw ConfigError("pre_emphasis: beta must be in [0, 1)");
    Recording out = rec;
    out.num_samples = rec.num_samples - 1;
    out.samples.resize(out.num_samples * rec.channels);
    for (std::size_t n = 0; n < out.num_samples; ++n) {
        for (std::size_t c = 0; c < rec.channels; ++c) {
            out.samples[n * rec.channels + c] = rec.at(n + 1, c) - beta * rec.at(n, c);
        }
    }
    return out;
}

MixupResult mixup_with_lambda(const Recording& a, std::size_t label_a, const Recording& b,
                              std::size_t label_b, std::size_t num_classes, double lambda,
                              const std::vector<double>* tag_a,
                              const std::vector<double>* tag_b) {
    if (a.samples.size() != b.samples.size() || a.channels != b.channels) {
        throw DimensionError("mixup: recordings must have identical shapes");
    }
    if (label_a >= num_classes || label_b >= num_classes) {
        throw DataError("mixup: label out of range");
    }
    MixupResult out;
    out.lambda = lambda;
    out.samples.resize(a.samples.size());
    for (std::size_t i = 0; i < out.samples.size(); ++i) {
        out.samples[i] = lambda * a.samples[i] + (1.0 - lambda) * b.samples[i];
    }
    out.soft_label.assign(num_classes, 0.0);
    out.soft_label[label_a] += lambda;
    out.soft_label[label_b] += 1.0 - lambda;
    if (tag_a && tag_b) {
        if (tag_a->size() != tag_b->size()) throw DimensionError("mixup: tag length mismatch");
        out.mixed_tag.resize(tag_a->size());
        for (std::size_t i = 0; i < out.mixed_tag.size(); ++i) {
            out.mixed_tag[i] = lambda * (*tag_a)[i] + (1.0 - lambda) * (*tag_b)[i];
        }
    }
    return out;
}

MixupResult mixup(const Recording& a, std::size_t label_a, const Recording& b,
                  std::size_t label_b, std::size_t num_classes, double alpha, Rng& rng,
                  const std::vector<double>* tag_a, const std::vector<double>* tag_b) {
    if (!(alpha > 0.0)) throw ConfigError("mixup: alpha must be positive");
    const double lambda = rng.beta(alpha, alpha);
    return mixup_with_lambda(a, label_a, b, label_b, num_classes, lambda, tag_a, tag_b);
}

namespace {

std::vector<std::string> split_ws(const std::string& line) {
    std::vector<std::string> out;
    std::istringstream is(line);
    std::string tok;
    while (is >> tok) out.push_back(tok);
    return out;
}

}  // namespace

std::vector<std::pair<std::string, std::string>> load_metadata(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open metadata file: " + path);
    std::vector<std::pair<std::string, std::string>> rows;
    std::set<std::string> seen;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const char sep = line.find('\t') != std::string::npos ? '\t' : ',';
        const auto pos = line.find(sep);
        if (pos == std::string::npos) {
            throw ParseError(path + ":" + std::to_string(lineno) +
                             ": expected \"filename<sep>scene_label\"");
        }
        std::string id = line.substr(0, pos);
        std::string label = line.substr(pos + 1);
        if (id.empty() || label.empty() || label.find(sep) != std::string::npos) {
            throw ParseError(path + ":" + std::to_string(lineno) + ": wrong column count");
        }
        if (!seen.insert(id).second) {
            throw ParseError(path + ":" + std::to_string(lineno) + ": duplicate id \"" + id + "\"");
        }
        rows.emplace_back(std::move(id), std::move(label));
    }
    return rows;
}

TagTable load_tags(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open tags file: " + path);
    TagTable table;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto toks = split_ws(line);
        if (toks.size() < 2) {
            throw ParseError(path + ":" + std::to_string(lineno) + ": expected \"id v1 ... vc\"");
        }
        TagVector tv;
        tv.source_id = toks[0];
        for (std::size_t i = 1; i < toks.size(); ++i) {
            double v;
            try {
                std::size_t used = 0;
                v = std::stod(toks[i], &used);
                if (used != toks[i].size()) throw std::invalid_argument("trailing");
            } catch (const std::exception&) {
                throw ParseError(path + ":" + std::to_string(lineno) + ": bad tag value \"" +
                                 toks[i] + "\"");
            }
            if (v < 0.0 || v > 1.0) {
                throw ParseError(path + ":" + std::to_string(lineno) + ": tag value " + toks[i] +
                                 " outside [0, 1]");
            }
            tv.values.push_back(v);
        }
        if (table.tag_dim == 0) {
            table.tag_dim = tv.values.size();
        } else if (tv.values.size() != table.tag_dim) {
            throw ParseError(path + ":" + std::to_string(lineno) + ": tag length " +
                             std::to_string(tv.values.size()) + " != " +
                             std::to_string(table.tag_dim));
        }
        if (table.entries.count(tv.source_id)) {
            throw ParseError(path + ":" + std::to_string(lineno) + ": duplicate id \"" +
                             tv.source_id + "\"");
        }
        table.entries.emplace(tv.source_id, std::move(tv));
    }
    return table;
}

void save_metadata(const std::string& path,
                   const std::vector<std::pair<std::string, std::string>>& rows) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write metadata file: " + path);
    for (const auto& [id, label] : rows) out << id << '\t' << label << '\n';
}

void save_tags(const std::string& path, const TagTable& tags) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write tags file: " + path);
    char buf[64];
    for (const auto& [id, tv] : tags.entries) {
        out << id;
        for (double v : tv.values) {
            std::snprintf(buf, sizeof(buf), "%.17g", v);
            out << ' ' << buf;
        }
        out << '\n';
    }
}

void SynthSpec::validate() const {
    if (num_scenes < 2) throw ConfigError("synth: need at least 2 scenes");
    if (num_event_types < num_scenes) {
        throw ConfigError("synth: need at least one event type per scene");
    }
    if (duration_samples < 2) throw ConfigError("synth: duration too short");
    if (!(char_prob >= 0.0 && char_prob <= 1.0) ||
        !(background_prob >= 0.0 && background_prob <= 1.0)) {
        throw ConfigError("synth: probabilities must be in [0, 1]");
    }
    if (!(tag_blur >= 0.0 && tag_blur <= 0.49)) {
        throw ConfigError("synth: tag_blur must be in [0, 0.49]");
    }
    // distinct characteristic profiles keep the tags informative
    std::set<std::vector<std::size_t>> profiles;
    for (std::size_t s = 0; s < num_scenes; ++s) {
        if (!profiles.insert(synth_scene_profile(*this, s)).second) {
            throw ConfigError("synth: scene profiles are not distinct (c too small?)");
        }
    }
}

std::vector<std::size_t> synth_scene_profile(const SynthSpec& spec, std::size_t scene) {
    std::vector<std::size_t> events;
    for (std::size_t j = 0; j < spec.char_events_per_scene; ++j) {
        events.push_back((scene * spec.char_events_per_scene + j) % spec.num_event_types);
    }
    std::sort(events.begin(), events.end());
    events.erase(std::unique(events.begin(), events.end()), events.end());
    return events;
}

namespace {

Recording synth_one(const SynthSpec& spec, std::size_t scene, const std::string& id, Rng& rng,
                    std::vector<int>& occurred) {
    Recording rec;
    rec.id = id;
    rec.channels = 1;
    rec.sample_rate = spec.sample_rate;
    rec.num_samples = spec.duration_samples;
    rec.samples.assign(spec.duration_samples, 0.0);
    rec.scene_label = scene;

    for (std::size_t n = 0; n < spec.duration_samples; ++n) {
        rec.samples[n] = spec.noise_level * rng.normal();
    }

    const auto chars = synth_scene_profile(spec, scene);
    occurred.assign(spec.num_event_types, 0);
    for (std::size_t e = 0; e < spec.num_event_types; ++e) {
        const bool is_char = std::find(chars.begin(), chars.end(), e) != chars.end();
        const double p = is_char ? spec.char_prob : spec.background_prob;
        if (rng.uniform01() >= p) continue;
        occurred[e] = 1;
        // sinusoid burst at an event-specific frequency, random placement
        const std::size_t burst = std::max<std::size_t>(16, spec.duration_samples / 4);
        const std::size_t start = rng.below(spec.duration_samples - burst + 1);
        const double freq =
            0.01 + 0.4 * static_cast<double>(e + 1) / static_cast<double>(spec.num_event_types + 1);
        const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
        for (std::size_t n = 0; n < burst; ++n) {
            rec.samples[start + n] +=
                spec.event_amplitude *
                std::sin(2.0 * std::numbers::pi * freq * static_cast<double>(n) + phase);
        }
    }
    for (double& s : rec.samples) s = std::clamp(s, -1.0, 32767.0 / 32768.0);
    return rec;
}

}  // namespace

SynthDataset generate_synthetic(const SynthSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    SynthDataset ds;
    ds.tags.tag_dim = spec.num_event_types;
    for (std::size_t s = 0; s < spec.num_scenes; ++s) {
        ds.class_names.push_back("scene" + std::to_string(s));
    }

    auto emit = [&](std::vector<Recording>& dst, const char* split, std::size_t scene,
                    std::size_t index) {
        std::ostringstream name;
        name << "audio/" << split << "_scene" << scene << "_" << index << ".wav";
        std::vector<int> occurred;
        Recording rec = synth_one(spec, scene, name.str(), rng, occurred);
        ds.event_truth[rec.id] = occurred;

        TagVector tv;
        tv.source_id = rec.id;
        tv.values.resize(spec.num_event_types);
        for (std::size_t e = 0; e < spec.num_event_types; ++e) {
            const double u = rng.uniform01();
            tv.values[e] = occurred[e] ? 1.0 - u * spec.tag_blur : u * spec.tag_blur;
        }
        ds.tags.entries.emplace(tv.source_id, std::move(tv));
        dst.push_back(std::move(rec));
    };

    for (std::size_t scene = 0; scene < spec.num_scenes; ++scene) {
        for (std::size_t i = 0; i < spec.train_per_scene; ++i) emit(ds.train, "train", scene, i);
    }
    for (std::size_t scene = 0; scene < spec.num_scenes; ++scene) {
        for (std::size_t i = 0; i < spec.test_per_scene; ++i) emit(ds.test, "test", scene, i);
    }
    return ds;
}

SynthSpec load_synth_spec(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open synth spec file: " + path);
    SynthSpec spec;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ParseError(path + ":" + std::to_string(lineno) + ": expected key=value");
        }
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t");
            const auto b = s.find_last_not_of(" \t");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        try {
            if (key == "num_scenes") spec.num_scenes = std::stoul(val);
            else if (key == "num_event_types") spec.num_event_types = std::stoul(val);
            else if (key == "train_per_scene") spec.train_per_scene = std::stoul(val);
            else if (key == "test_per_scene") spec.test_per_scene = std::stoul(val);
            else if (key == "duration_samples") spec.duration_samples = std::stoul(val);
            else if (key == "sample_rate") spec.sample_rate = std::stoul(val);
            else if (key == "char_events_per_scene") spec.char_events_per_scene = std::stoul(val);
            else if (key == "char_prob") spec.char_prob = std::stod(val);
            else if (key == "background_prob") spec.background_prob = std::stod(val);
            else if (key == "event_amplitude") spec.event_amplitude = std::stod(val);
            else if (key == "noise_level") spec.noise_level = std::stod(val);
            else if (key == "tag_blur") spec.tag_blur = std::stod(val);
            else if (key == "seed") spec.seed = std::stoull(val);
            else throw ParseError(path + ":" + std::to_string(lineno) + ": unknown key \"" + key + "\"");
        } catch (const ParseError&) {
            throw;
        } catch (const std::exception&) {
            throw ParseError(path + ":" + std::to_string(lineno) + ": bad value \"" + val + "\"");
        }
    }
    return spec;
}

void write_synth_dataset(const std::string& dir, const SynthDataset& ds) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(dir) / "audio");

    std::vector<std::pair<std::string, std::string>> train_rows, test_rows;
    for (const auto& rec : ds.train) {
        write_wav_file((fs::path(dir) / rec.id).string(), rec);
        train_rows.emplace_back(rec.id, ds.class_names[*rec.scene_label]);
    }
    for (const auto& rec : ds.test) {
        write_wav_file((fs::path(dir) / rec.id).string(), rec);
        test_rows.emplace_back(rec.id, ds.class_names[*rec.scene_label]);
    }
    save_metadata((fs::path(dir) / "train_metadata.txt").string(), train_rows);
    save_metadata((fs::path(dir) / "test_metadata.txt").string(), test_rows);
    save_tags((fs::path(dir) / "tags.txt").string(), ds.tags);
}

}  // namespace tagasc
