#include "vssmseg/config.hpp"

#include <fstream>
#include <sstream>

namespace vssmseg {

namespace {

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ValueError("config: key '" + key + "' expects a boolean, got '" + v + "'");
}

int64_t parse_int(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        int64_t r = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ValueError("config: key '" + key + "' expects an integer, got '" + v + "'");
    }
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        double r = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ValueError("config: key '" + key + "' expects a number, got '" + v + "'");
    }
}

}  // namespace

std::map<std::string, std::string> parse_kv_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config file " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ValueError("config: line " + std::to_string(lineno) + " of " + path +
                             " is not 'key = value': '" + line + "'");
        std::string key = trim(line.substr(0, eq));
        std::string val = trim(line.substr(eq + 1));
        if (key.empty()) throw ValueError("config: empty key on line " + std::to_string(lineno));
        if (kv.count(key)) throw ValueError("config: duplicate key '" + key + "'");
        kv[key] = val;
    }
    return kv;
}

RunConfig run_config_from_map(const std::map<std::string, std::string>& kv) {
    RunConfig rc;
    for (const auto& [key, v] : kv) {
        if (key == "epochs") rc.train.epochs = parse_int(key, v);
        else if (key == "batch_size") rc.train.batch_size = parse_int(key, v);
        else if (key == "lr_init") rc.train.lr_init = parse_double(key, v);
        else if (key == "lr_min") rc.train.lr_min = parse_double(key, v);
        else if (key == "t_max") rc.train.t_max = parse_int(key, v);
        else if (key == "weight_decay") rc.train.weight_decay = parse_double(key, v);
        else if (key == "seed") rc.train.seed = static_cast<uint64_t>(parse_int(key, v));
        else if (key == "augment_flip_h") rc.train.augment_flip_h = parse_bool(key, v);
        else if (key == "augment_flip_v") rc.train.augment_flip_v = parse_bool(key, v);
        else if (key == "augment_rot90") rc.train.augment_rot90 = parse_bool(key, v);
        else if (key == "base_channels") rc.model.base_channels = parse_int(key, v);
        else if (key == "depths") {
            std::stringstream ss(v);
            std::string part;
            int i = 0;
            while (std::getline(ss, part, ',')) {
                if (i >= 4) throw ValueError("config: depths expects 4 comma-separated values");
                rc.model.depths[static_cast<size_t>(i++)] =
                    static_cast<int>(parse_int(key, trim(part)));
            }
            if (i != 4) throw ValueError("config: depths expects 4 comma-separated values");
        } else if (key == "state_dim") rc.model.state_dim = parse_int(key, v);
        else if (key == "sdi_channels") rc.model.sdi_channels = parse_int(key, v);
        else if (key == "input_size") {
            rc.model.input_h = parse_int(key, v);
            rc.model.input_w = rc.model.input_h;
        } else if (key == "deep_supervision") rc.model.deep_supervision = parse_bool(key, v);
        else if (key == "num_classes") rc.model.num_classes = parse_int(key, v);
        else if (key == "data") rc.data_dir = v;
        else if (key == "val_fraction") rc.val_fraction = parse_double(key, v);
        else throw ValueError("config: unknown key '" + key + "'");
    }
    if (rc.val_fraction < 0.0 || rc.val_fraction >= 1.0)
        throw ValueError("config: val_fraction must be in [0, 1)");
    rc.model.validate();
    rc.train.validate();
    return rc;
}

RunConfig parse_run_config(const std::string& path) {
    return run_config_from_map(parse_kv_file(path));
}

std::string render_run_config(const RunConfig& rc) {
    std::ostringstream os;
    os << "base_channels = " << rc.model.base_channels << "\n";
    os << "depths = " << rc.model.depths[0] << "," << rc.model.depths[1] << ","
       << rc.model.depths[2] << "," << rc.model.depths[3] << "\n";
    os << "state_dim = " << rc.model.state_dim << "\n";
    os << "sdi_channels = " << rc.model.sdi_channels << "\n";
    os << "input_size = " << rc.model.input_h << "\n";
    os << "deep_supervision = " << (rc.model.deep_supervision ? "true" : "false") << "\n";
    os << "num_classes = " << rc.model.num_classes << "\n";
    os << "epochs = " << rc.train.epochs << "\n";
    os << "batch_size = " << rc.train.batch_size << "\n";
    os << "lr_init = " << rc.train.lr_init << "\n";
    os << "lr_min = " << rc.train.lr_min << "\n";
    os << "t_max = " << rc.train.t_max << "\n";
    os << "weight_decay = " << rc.train.weight_decay << "\n";
    os << "seed = " << rc.train.seed << "\n";
    os << "augment_flip_h = " << (rc.train.augment_flip_h ? "true" : "false") << "\n";
    os << "augment_flip_v = " << (rc.train.augment_flip_v ? "true" : "false") << "\n";
    os << "augment_rot90 = " << (rc.train.augment_rot90 ? "true" : "false") << "\n";
    if (!rc.data_dir.empty()) os << "data = " << rc.data_dir << "\n";
    os << "val_fraction = " << rc.val_fraction << "\n";
    return os.str();
}

}  // namespace vssmseg
