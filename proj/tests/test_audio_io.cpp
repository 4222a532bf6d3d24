#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "tagasc/audio_io.hpp"
#include "tagasc/tensor.hpp"

using namespace tagasc;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("tagasc_test_" + std::to_string(::getpid()) + "_" +
                std::to_string(reinterpret_cast<std::uintptr_t>(this)));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

std::vector<std::uint8_t> wav_fixture_mono(const std::vector<std::int16_t>& pcm,
                                           std::uint32_t rate = 48000,
                                           std::uint16_t channels = 1) {
    std::vector<std::uint8_t> b;
    auto u32 = [&](std::uint32_t v) {
        for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    };
    auto u16 = [&](std::uint16_t v) {
        b.push_back(static_cast<std::uint8_t>(v & 0xff));
        b.push_back(static_cast<std::uint8_t>(v >> 8));
    };
    const std::uint32_t data_len = static_cast<std::uint32_t>(pcm.size() * 2);
    b.insert(b.end(), {'R', 'I', 'F', 'F'});
    u32(36 + data_len);
    b.insert(b.end(), {'W', 'A', 'V', 'E'});
    b.insert(b.end(), {'f', 'm', 't', ' '});
    u32(16);
    u16(1);
    u16(channels);
    u32(rate);
    u32(rate * channels * 2);
    u16(static_cast<std::uint16_t>(channels * 2));
    u16(16);
    b.insert(b.end(), {'d', 'a', 't', 'a'});
    u32(data_len);
    for (std::int16_t v : pcm) u16(static_cast<std::uint16_t>(v));
    return b;
}

}  // namespace

TEST_CASE("parse_wav reads a hand-built 4-sample mono fixture exactly") {
    auto bytes = wav_fixture_mono({0, 16384, -16384, 32767});
    auto rec = parse_wav(bytes);
    CHECK(rec.channels == 1);
    CHECK(rec.num_samples == 4);
    CHECK(rec.sample_rate == 48000);
    CHECK(rec.samples[0] == 0.0);
    CHECK(rec.samples[1] == 0.5);
    CHECK(rec.samples[2] == -0.5);
    CHECK(rec.samples[3] == 32767.0 / 32768.0);
}

TEST_CASE("parse_wav handles a 10 s stereo 48 kHz file") {
    std::vector<std::int16_t> pcm(480000 * 2, 123);
    auto rec = parse_wav(wav_fixture_mono(pcm, 48000, 2));
    CHECK(rec.num_samples == 480000);
    CHECK(rec.channels == 2);
}

TEST_CASE("parse_wav rejects 3 channels as unsupported codec") {
    auto bytes = wav_fixture_mono({0, 0, 0, 0, 0, 0}, 48000, 3);
    CHECK_THROWS_WITH_AS(parse_wav(bytes), doctest::Contains("unsupported codec"), ParseError);
}

TEST_CASE("parse_wav cites byte offsets on truncation") {
    auto bytes = wav_fixture_mono({1, 2, 3, 4});
    bytes.resize(bytes.size() - 3);  // truncate the data chunk
    try {
        parse_wav(bytes);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find("offset") != std::string::npos);
    }
}

TEST_CASE("parse_wav skips unknown chunks") {
    auto bytes = wav_fixture_mono({100, -100});
    // splice a LIST chunk between fmt and data (fmt ends at offset 36)
    std::vector<std::uint8_t> extra = {'L', 'I', 'S', 'T', 4, 0, 0, 0, 'x', 'y', 'z', 'w'};
    bytes.insert(bytes.begin() + 36, extra.begin(), extra.end());
    auto rec = parse_wav(bytes);
    CHECK(rec.num_samples == 2);
    CHECK(rec.samples[0] == doctest::Approx(100.0 / 32768.0));
}

TEST_CASE("write_wav then parse_wav is identity on PCM16 samples") {
    Rng rng(31);
    Recording rec;
    rec.channels = 2;
    rec.sample_rate = 44100;
    rec.num_samples = 257;
    rec.samples.resize(rec.num_samples * 2);
    for (auto& s : rec.samples) {
        s = static_cast<double>(static_cast<std::int64_t>(rng.below(65536)) - 32768) / 32768.0;
    }
    auto back = parse_wav(write_wav(rec));
    CHECK(back.num_samples == rec.num_samples);
    CHECK(back.channels == rec.channels);
    CHECK(back.sample_rate == rec.sample_rate);
    for (std::size_t i = 0; i < rec.samples.size(); ++i) CHECK(back.samples[i] == rec.samples[i]);
}

TEST_CASE("pre_emphasis length contract and analytic cases") {
    Recording rec;
    rec.channels = 2;
    rec.num_samples = 480000;
    rec.samples.assign(480000 * 2, 0.25);
    auto out = pre_emphasis(rec, 0.97);
    CHECK(out.num_samples == 479999);
    // constant signal: y = (1 - beta) * const
    for (std::size_t i = 0; i < 10; ++i) {
        CHECK(out.samples[i] == doctest::Approx(0.25 * 0.03).epsilon(1e-12));
    }

    Recording small;
    small.channels = 1;
    small.num_samples = 5;
    small.samples = {1.0, 2.0, 3.0, 4.0, 5.0};
    auto shifted = pre_emphasis(small, 0.0);
    CHECK(shifted.samples == std::vector<double>{2.0, 3.0, 4.0, 5.0});

    for (std::size_t n = 2; n < 40; ++n) {
        Recording r;
        r.channels = 1;
        r.num_samples = n;
        r.samples.assign(n, 0.5);
        CHECK(pre_emphasis(r).num_samples == n - 1);
    }

    Recording one;
    one.channels = 1;
    one.num_samples = 1;
    one.samples = {0.1};
    CHECK_THROWS_AS(pre_emphasis(one), DimensionError);
}

TEST_CASE("mixup endpoints and midpoint") {
    Recording a, b;
    a.channels = b.channels = 1;
    a.num_samples = b.num_samples = 4;
    a.samples = {1.0, 0.0, -1.0, 0.5};
    b.samples = {0.0, 1.0, 1.0, -0.5};

    auto at1 = mixup_with_lambda(a, 0, b, 1, 3, 1.0);
    CHECK(at1.samples == a.samples);
    CHECK(at1.soft_label == std::vector<double>{1.0, 0.0, 0.0});

    auto mid = mixup_with_lambda(a, 0, b, 1, 3, 0.5);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(mid.samples[i] == doctest::Approx(0.5 * (a.samples[i] + b.samples[i])));
    }
    CHECK(mid.soft_label == std::vector<double>{0.5, 0.5, 0.0});

    std::vector<double> ta = {1.0, 0.0}, tb = {0.0, 1.0};
    auto tagged = mixup_with_lambda(a, 0, b, 1, 3, 0.25, &ta, &tb);
    CHECK(tagged.mixed_tag[0] == doctest::Approx(0.25));
    CHECK(tagged.mixed_tag[1] == doctest::Approx(0.75));
}

TEST_CASE("mixup soft labels sum to 1 and lambda mean matches Beta symmetry") {
    Recording a, b;
    a.channels = b.channels = 1;
    a.num_samples = b.num_samples = 2;
    a.samples = {0.1, 0.2};
    b.samples = {0.3, 0.4};
    Rng rng(41);
    double sum_lambda = 0.0;
    const int draws = 100000;
    for (int i = 0; i < draws; ++i) {
        auto m = mixup(a, 0, b, 1, 2, 0.4, rng);
        double s = 0.0;
        for (double v : m.soft_label) s += v;
        REQUIRE(std::abs(s - 1.0) < 1e-12);
        sum_lambda += m.lambda;
    }
    CHECK(std::abs(sum_lambda / draws - 0.5) < 0.01);
}

TEST_CASE("mixup rejects shape mismatches") {
    Recording a, b;
    a.channels = b.channels = 1;
    a.num_samples = 3;
    a.samples = {1, 2, 3};
    b.num_samples = 2;
    b.samples = {1, 2};
    CHECK_THROWS_AS(mixup_with_lambda(a, 0, b, 1, 2, 0.5), DimensionError);
}

TEST_CASE("load_metadata accepts ten scene labels and both separators") {
    TempDir tmp;
    const auto p = (tmp.path / "meta.csv").string();
    {
        std::ofstream out(p);
        for (int i = 0; i < 10; ++i) out << "clip" << i << ".wav,scene" << i << "\n";
    }
    auto rows = load_metadata(p);
    REQUIRE(rows.size() == 10);
    CHECK(rows[3].first == "clip3.wav");
    CHECK(rows[3].second == "scene3");

    const auto pt = (tmp.path / "meta.tsv").string();
    {
        std::ofstream out(pt);
        out << "a.wav\tpark\nb.wav\tmetro\n";
    }
    auto rows2 = load_metadata(pt);
    CHECK(rows2.size() == 2);
    CHECK(rows2[1].second == "metro");
}

TEST_CASE("load_metadata edge cases") {
    TempDir tmp;
    const auto empty = (tmp.path / "empty.txt").string();
    { std::ofstream out(empty); }
    CHECK(load_metadata(empty).empty());

    const auto dup = (tmp.path / "dup.txt").string();
    {
        std::ofstream out(dup);
        out << "x.wav,park\nx.wav,metro\n";
    }
    CHECK_THROWS_WITH_AS(load_metadata(dup), doctest::Contains("duplicate"), ParseError);

    const auto cols = (tmp.path / "cols.txt").string();
    {
        std::ofstream out(cols);
        out << "x.wav,park,extra\n";
    }
    CHECK_THROWS_AS(load_metadata(cols), ParseError);
}

TEST_CASE("load_tags validates values and cites line numbers") {
    TempDir tmp;
    const auto p = (tmp.path / "tags.txt").string();
    {
        std::ofstream out(p);
        for (int i = 1; i <= 6; ++i) out << "id" << i << " 0.1 0.9 0.5\n";
        out << "id7 0.1 1.5 0.5\n";
    }
    try {
        load_tags(p);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        const std::string msg = e.what();
        CHECK(msg.find(":7:") != std::string::npos);
        CHECK(msg.find("1.5") != std::string::npos);
    }

    const auto good = (tmp.path / "good.txt").string();
    {
        std::ofstream out(good);
        out << "a 0 1 0.25\nb 1 0 0.75\n";
    }
    auto table = load_tags(good);
    CHECK(table.tag_dim == 3);
    CHECK(table.find("a")->values[2] == 0.25);
    CHECK(table.find("missing") == nullptr);
}

TEST_CASE("tags round-trip through save_tags") {
    TempDir tmp;
    TagTable t;
    t.tag_dim = 2;
    t.entries["r1"] = {{0.12345678901234567, 1.0}, "r1"};
    t.entries["r2"] = {{0.0, 0.5}, "r2"};
    const auto p = (tmp.path / "tags.txt").string();
    save_tags(p, t);
    auto back = load_tags(p);
    CHECK(back.tag_dim == 2);
    CHECK(back.find("r1")->values[0] == t.entries["r1"].values[0]);
    CHECK(back.find("r2")->values[1] == 0.5);
}

TEST_CASE("generate_synthetic is deterministic for a fixed seed") {
    SynthSpec spec;
    spec.train_per_scene = 3;
    spec.test_per_scene = 2;
    spec.duration_samples = 512;
    auto a = generate_synthetic(spec);
    auto b = generate_synthetic(spec);
    REQUIRE(a.train.size() == b.train.size());
    for (std::size_t i = 0; i < a.train.size(); ++i) {
        CHECK(a.train[i].samples == b.train[i].samples);
        CHECK(a.train[i].id == b.train[i].id);
    }
    for (const auto& [id, tv] : a.tags.entries) {
        CHECK(tv.values == b.tags.entries.at(id).values);
    }
}

TEST_CASE("zero noise, one event per scene: a tag decision stump is perfect") {
    SynthSpec spec;
    spec.num_scenes = 4;
    spec.num_event_types = 4;
    spec.char_events_per_scene = 1;
    spec.char_prob = 1.0;
    spec.background_prob = 0.0;
    spec.noise_level = 0.0;
    spec.tag_blur = 0.0;
    spec.train_per_scene = 5;
    spec.test_per_scene = 5;
    spec.duration_samples = 512;
    auto ds = generate_synthetic(spec);

    auto stump = [&](const Recording& rec) {
        const auto& tv = ds.tags.entries.at(rec.id).values;
        std::size_t best = 0;
        for (std::size_t s = 0; s < spec.num_scenes; ++s) {
            const auto prof = synth_scene_profile(spec, s);
            if (tv[prof[0]] > 0.5) best = s;
        }
        return best;
    };
    for (const auto& rec : ds.test) CHECK(stump(rec) == *rec.scene_label);
    for (const auto& rec : ds.train) CHECK(stump(rec) == *rec.scene_label);
}

TEST_CASE("ground-truth tags are consistent with audible events") {
    SynthSpec spec;
    spec.train_per_scene = 4;
    spec.test_per_scene = 2;
    spec.duration_samples = 512;
    spec.tag_blur = 0.3;
    auto ds = generate_synthetic(spec);
    for (const auto& [id, tv] : ds.tags.entries) {
        const auto& truth = ds.event_truth.at(id);
        for (std::size_t e = 0; e < tv.values.size(); ++e) {
            // blur is bounded below 0.5, so thresholding recovers the truth
            CHECK((tv.values[e] > 0.5) == (truth[e] == 1));
        }
    }
}

TEST_CASE("synthetic dataset writes and loads through the common path") {
    TempDir tmp;
    SynthSpec spec;
    spec.train_per_scene = 2;
    spec.test_per_scene = 1;
    spec.duration_samples = 256;
    auto ds = generate_synthetic(spec);
    write_synth_dataset(tmp.path.string(), ds);

    auto rows = load_metadata((tmp.path / "train_metadata.txt").string());
    CHECK(rows.size() == ds.train.size());
    auto tags = load_tags((tmp.path / "tags.txt").string());
    CHECK(tags.tag_dim == spec.num_event_types);

    auto rec = read_wav_file((tmp.path / rows[0].first).string());
    CHECK(rec.num_samples == spec.duration_samples);
    // samples were quantized to PCM16 on write
    const auto& orig = ds.train[0];
    for (std::size_t i = 0; i < rec.samples.size(); ++i) {
        CHECK(std::abs(rec.samples[i] - orig.samples[i]) <= 0.5 / 32768.0 + 1e-12);
    }
}

TEST_CASE("synth spec file parsing") {
    TempDir tmp;
    const auto p = (tmp.path / "spec.txt").string();
    {
        std::ofstream out(p);
        out << "# synthetic scene spec\nnum_scenes = 3\nnoise_level = 0.2\nseed = 99\n";
    }
    auto spec = load_synth_spec(p);
    CHECK(spec.num_scenes == 3);
    CHECK(spec.noise_level == 0.2);
    CHECK(spec.seed == 99);

    const auto bad = (tmp.path / "bad.txt").string();
    {
        std::ofstream out(bad);
        out << "nope = 1\n";
    }
    CHECK_THROWS_AS(load_synth_spec(bad), ParseError);
}

// Multinomial logistic probe used to calibrate the default SynthSpec: tags
// must carry far more scene information than crude waveform energies.
namespace {

std::vector<double> energy_features(const Recording& rec, std::size_t bands) {
    std::vector<double> feat(bands, 0.0);
    const std::size_t chunk = rec.num_samples / bands;
    for (std::size_t b = 0; b < bands; ++b) {
        double acc = 0.0;
        for (std::size_t n = b * chunk; n < (b + 1) * chunk; ++n) {
            const double v = rec.at(n, 0);
            acc += v * v;
        }
        feat[b] = std::sqrt(acc / static_cast<double>(chunk));
    }
    return feat;
}

double logistic_probe_accuracy(const std::vector<std::vector<double>>& train_x,
                               const std::vector<std::size_t>& train_y,
                               const std::vector<std::vector<double>>& test_x,
                               const std::vector<std::size_t>& test_y, std::size_t num_classes) {
    const std::size_t dim = train_x[0].size();
    auto w = Tensor::zeros({dim, num_classes}, true);
    auto b = Tensor::zeros({num_classes}, true);
    const double lr = 0.5;
    for (int epoch = 0; epoch < 60; ++epoch) {
        w->zero_grad();
        b->zero_grad();
        for (std::size_t i = 0; i < train_x.size(); ++i) {
            auto x = Tensor::vec(train_x[i]);
            auto loss = softmax_cross_entropy(dense(x, w, b), train_y[i]);
            loss->backward(1.0 / static_cast<double>(train_x.size()));
        }
        for (std::size_t j = 0; j < w->size(); ++j) w->data[j] -= lr * w->grad[j];
        for (std::size_t j = 0; j < b->size(); ++j) b->data[j] -= lr * b->grad[j];
    }
    std::size_t correct = 0;
    NoGradGuard ng;
    for (std::size_t i = 0; i < test_x.size(); ++i) {
        auto logits = dense(Tensor::vec(test_x[i]), w, b);
        std::size_t best = 0;
        for (std::size_t k = 1; k < num_classes; ++k) {
            if (logits->data[k] > logits->data[best]) best = k;
        }
        if (best == test_y[i]) ++correct;
    }
    return 100.0 * static_cast<double>(correct) / static_cast<double>(test_x.size());
}

}  // namespace

TEST_CASE("default spec: tag probe beats waveform-energy probe by >= 20 points") {
    SynthSpec spec;  // frozen defaults
    auto ds = generate_synthetic(spec);

    std::vector<std::vector<double>> tag_train, tag_test, nrg_train, nrg_test;
    std::vector<std::size_t> y_train, y_test;
    for (const auto& rec : ds.train) {
        tag_train.push_back(ds.tags.entries.at(rec.id).values);
        nrg_train.push_back(energy_features(rec, 8));
        y_train.push_back(*rec.scene_label);
    }
    for (const auto& rec : ds.test) {
        tag_test.push_back(ds.tags.entries.at(rec.id).values);
        nrg_test.push_back(energy_features(rec, 8));
        y_test.push_back(*rec.scene_label);
    }

    const double tag_acc =
        logistic_probe_accuracy(tag_train, y_train, tag_test, y_test, spec.num_scenes);
    const double nrg_acc =
        logistic_probe_accuracy(nrg_train, y_train, nrg_test, y_test, spec.num_scenes);
    MESSAGE("tag probe: ", tag_acc, "%, energy probe: ", nrg_acc, "%");
    CHECK(tag_acc >= nrg_acc + 20.0);
}
