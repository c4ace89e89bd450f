#include "rgbd/config.hpp"

#include <fstream>
#include <sstream>

#include "rgbd/rng.hpp"

namespace rgbd {
namespace cli {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

std::vector<int> parse_int_list(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(std::stoi(item));
    }
    require_cfg(!out.empty(), "empty integer list in config value '" + s + "'");
    return out;
}

std::string join_ints(const std::vector<int>& v) {
    std::string s;
    for (size_t i = 0; i < v.size(); i++) {
        if (i) s += ",";
        s += std::to_string(v[i]);
    }
    return s;
}

}  // namespace

IniFile IniFile::parse_string(const std::string& text) {
    IniFile ini;
    std::string section;
    std::stringstream ss(text);
    std::string line;
    int lineno = 0;
    while (std::getline(ss, line)) {
        lineno++;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            require_cfg(line.back() == ']', strf("config line %d: unterminated section", lineno));
            section = trim(line.substr(1, line.size() - 2));
            require_cfg(!section.empty(), strf("config line %d: empty section name", lineno));
            ini.sections[section];
            continue;
        }
        auto eq = line.find('=');
        require_cfg(eq != std::string::npos, strf("config line %d: expected key = value", lineno));
        std::string key = trim(line.substr(0, eq));
        std::string val = trim(line.substr(eq + 1));
        require_cfg(!key.empty(), strf("config line %d: empty key", lineno));
        require_cfg(!section.empty(), strf("config line %d: key outside any section", lineno));
        require_cfg(!ini.sections[section].count(key),
                    strf("config line %d: duplicate key %s.%s", lineno, section.c_str(),
                         key.c_str()));
        ini.sections[section][key] = val;
    }
    return ini;
}

IniFile IniFile::parse_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_string(ss.str());
}

RunConfig RunConfig::from_ini(const IniFile& ini) {
    RunConfig c;
    // schema: section -> key -> setter
    auto fail_unknown = [](const std::string& sec, const std::string& key) {
        throw ConfigError("unknown config key " + sec + "." + key);
    };
    for (auto& [sec, kv] : ini.sections) {
        for (auto& [key, val] : kv) {
            if (sec == "run") {
                if (key == "stage")
                    c.stage = val;
                else if (key == "seed")
                    c.seed = (uint64_t)std::stoull(val);
                else if (key == "out_dir")
                    c.out_dir = val;
                else
                    fail_unknown(sec, key);
            } else if (sec == "data") {
                if (key == "manifest")
                    c.data_manifest = val;
                else if (key == "image_size")
                    c.image_size = std::stoi(val);
                else
                    fail_unknown(sec, key);
            } else if (sec == "model") {
                if (key == "vae_base")
                    c.vae_base = std::stoi(val);
                else if (key == "base_channels")
                    c.base_channels = std::stoi(val);
                else if (key == "channel_mults")
                    c.channel_mults = parse_int_list(val);
                else if (key == "attn_resolutions")
                    c.attn_resolutions = parse_int_list(val);
                else if (key == "head_dim")
                    c.head_dim = std::stoi(val);
                else
                    fail_unknown(sec, key);
            } else if (sec == "schedule") {
                if (key == "levels")
                    c.levels = std::stoi(val);
                else if (key == "beta_min")
                    c.beta_min = std::stod(val);
                else if (key == "beta_max")
                    c.beta_max = std::stod(val);
                else
                    fail_unknown(sec, key);
            } else if (sec == "train") {
                if (key == "steps")
                    c.steps = std::stoi(val);
                else if (key == "batch")
                    c.batch = std::stoi(val);
                else if (key == "lr")
                    c.lr = std::stod(val);
                else if (key == "lambda_kl")
                    c.lambda_kl = std::stod(val);
                else if (key == "log_every")
                    c.log_every = std::stoi(val);
                else if (key == "sample_every")
                    c.sample_every = std::stoi(val);
                else if (key == "workers")
                    c.workers = std::stoi(val);
                else if (key == "ckpt_out")
                    c.ckpt_out = val;
                else if (key == "parent")
                    c.parent = val;
                else
                    fail_unknown(sec, key);
            } else if (sec == "motion") {
                if (key == "frames_per_seq")
                    c.frames_per_seq = std::stoi(val);
                else if (key == "n_motion")
                    c.n_motion = std::stoi(val);
                else if (key == "audio_window")
                    c.audio_window = std::stoi(val);
                else
                    fail_unknown(sec, key);
            } else {
                throw ConfigError("unknown config section [" + sec + "]");
            }
        }
    }
    require_cfg(c.stage == "vae" || c.stage == "rgb" || c.stage == "joint" ||
                    c.stage == "inpaint" || c.stage == "motion",
                "run.stage must be one of vae|rgb|joint|inpaint|motion, got '" + c.stage + "'");
    return c;
}

RunConfig RunConfig::from_file(const std::string& path) {
    return from_ini(IniFile::parse_file(path));
}

std::string RunConfig::canonical_text() const {
    std::string s;
    s += "[run]\nstage = " + stage + "\nseed = " + std::to_string(seed) +
         "\nout_dir = " + out_dir + "\n";
    s += "[data]\nmanifest = " + data_manifest +
         "\nimage_size = " + std::to_string(image_size) + "\n";
    s += "[model]\nvae_base = " + std::to_string(vae_base) +
         "\nbase_channels = " + std::to_string(base_channels) +
         "\nchannel_mults = " + join_ints(channel_mults) +
         "\nattn_resolutions = " + join_ints(attn_resolutions) +
         "\nhead_dim = " + std::to_string(head_dim) + "\n";
    s += "[schedule]\nlevels = " + std::to_string(levels) + "\nbeta_min = " + strf("%g", beta_min) +
         "\nbeta_max = " + strf("%g", beta_max) + "\n";
    s += "[train]\nsteps = " + std::to_string(steps) + "\nbatch = " + std::to_string(batch) +
         "\nlr = " + strf("%g", lr) + "\nlambda_kl = " + strf("%g", lambda_kl) +
         "\nlog_every = " + std::to_string(log_every) +
         "\nsample_every = " + std::to_string(sample_every) + "\nckpt_out = " + ckpt_out +
         "\nparent = " + parent + "\n";
    s += "[motion]\nframes_per_seq = " + std::to_string(frames_per_seq) +
         "\nn_motion = " + std::to_string(n_motion) +
         "\naudio_window = " + std::to_string(audio_window) + "\n";
    return s;
}

std::string RunConfig::config_hash() const {
    return strf("%016llx", (unsigned long long)fnv1a64(canonical_text()));
}

RunConfig default_config(const std::string& stage) {
    RunConfig c;
    c.stage = stage;
    if (stage == "vae") {
        c.steps = 3000;
        c.batch = 16;
        c.lr = 1e-3;
    } else if (stage == "rgb") {
        c.steps = 3000;
        c.batch = 32;
        c.lr = 1e-4;
    } else if (stage == "joint") {
        // batch size of 32 and a constant learning rate of 1e-5, desk-scaled
        // to 5k steps
        c.steps = 5000;
        c.batch = 32;
        c.lr = 1e-5;
    } else if (stage == "inpaint") {
        c.steps = 1000;
        c.batch = 32;
        c.lr = 1e-5;
    } else if (stage == "motion") {
        c.steps = 3000;
        c.batch = 1;
        c.lr = 1e-4;
    } else {
        throw ConfigError("unknown stage '" + stage + "'");
    }
    return c;
}

}  // namespace cli
}  // namespace rgbd
