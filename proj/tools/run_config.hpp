#ifndef MSSM_TOOLS_RUN_CONFIG_HPP
#define MSSM_TOOLS_RUN_CONFIG_HPP

// Command settings: declared keys with defaults, overridable from a
// `key = value` config file and then from `--key value` flags.

#include <CLI11.hpp>

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mssm::tools {

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s)
{
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

/// Parses `key = value` lines; `#` starts a comment. Throws UsageError with the line number.
inline std::map<std::string, std::string> parse_config_text(std::istream& in)
{
    std::map<std::string, std::string> out;
    std::string line;
    std::size_t lineNo = 0;
    while (std::getline(in, line)) {
        ++lineNo;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw UsageError("config line " + std::to_string(lineNo) + ": expected 'key = value'");
        }
        const std::string key = trim(line.substr(0, eq));
        if (key.empty()) throw UsageError("config line " + std::to_string(lineNo) + ": empty key");
        out[key] = trim(line.substr(eq + 1));
    }
    return out;
}

class RunConfig {
public:
    void declare(const std::string& key, const std::string& value, const std::string& help)
    {
        index_[key] = entries_.size();
        entries_.push_back({key, value, help, nullptr});
    }

    /// Registers one `--key` option per declared setting, plus `--config`.
    void bind(CLI::App& app)
    {
        for (auto& e : entries_) e.opt = app.add_option("--" + e.key, e.value, e.help)->capture_default_str();
        app.add_option("--config", configPath_, "settings file with 'key = value' lines");
    }

    /// Applies the config file to every key not given explicitly on the command line.
    void resolve()
    {
        if (configPath_.empty()) return;
        std::ifstream in(configPath_);
        if (!in) throw UsageError("cannot open config file '" + configPath_ + "'");
        for (const auto& [key, value] : parse_config_text(in)) {
            const auto it = index_.find(key);
            if (it == index_.end()) throw UsageError("config: unknown key '" + key + "'");
            Entry& e = entries_[it->second];
            if (e.opt == nullptr || e.opt->count() == 0) e.value = value;
        }
    }

    [[nodiscard]] const std::string& str(const std::string& key) const { return entry(key).value; }

    [[nodiscard]] double num(const std::string& key) const
    {
        const std::string& v = str(key);
        try {
            std::size_t used = 0;
            const double x = std::stod(v, &used);
            if (used == v.size()) return x;
        } catch (const std::exception&) {
        }
        throw UsageError("'" + key + "' expects a number, got '" + v + "'");
    }

    [[nodiscard]] std::uint64_t uint(const std::string& key) const
    {
        const std::string& v = str(key);
        try {
            std::size_t used = 0;
            if (!v.empty() && v[0] != '-') {
                const unsigned long long x = std::stoull(v, &used);
                if (used == v.size()) return x;
            }
        } catch (const std::exception&) {
        }
        throw UsageError("'" + key + "' expects a non-negative integer, got '" + v + "'");
    }

    [[nodiscard]] std::size_t size(const std::string& key) const { return static_cast<std::size_t>(uint(key)); }

    [[nodiscard]] bool flag(const std::string& key) const
    {
        const std::string& v = str(key);
        if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
        if (v == "false" || v == "0" || v == "no" || v == "off") return false;
        throw UsageError("'" + key + "' expects true or false, got '" + v + "'");
    }

    [[nodiscard]] std::vector<std::string> words(const std::string& key) const { return split_list(str(key)); }

    [[nodiscard]] std::vector<double> nums(const std::string& key) const
    {
        std::vector<double> out;
        for (const auto& w : words(key)) {
            try {
                std::size_t used = 0;
                const double x = std::stod(w, &used);
                if (used == w.size()) {
                    out.push_back(x);
                    continue;
                }
            } catch (const std::exception&) {
            }
            throw UsageError("'" + key + "' expects a comma-separated list of numbers, got '" + w + "'");
        }
        return out;
    }

    [[nodiscard]] std::vector<std::size_t> sizes(const std::string& key) const
    {
        std::vector<std::size_t> out;
        for (const double x : nums(key)) {
            if (x < 0 || x != static_cast<double>(static_cast<std::size_t>(x))) {
                throw UsageError("'" + key + "' expects non-negative integers");
            }
            out.push_back(static_cast<std::size_t>(x));
        }
        return out;
    }

    /// Every resolved setting as `key = value`; feeding it back as --config reproduces the run.
    void write_echo(std::ostream& out, const std::string& command) const
    {
        out << "# resolved settings for '" << command << "'\n";
        for (const auto& e : entries_) out << e.key << " = " << e.value << "\n";
    }

private:
    struct Entry {
        std::string key;
        std::string value;
        std::string help;
        CLI::Option* opt;
    };

    [[nodiscard]] const Entry& entry(const std::string& key) const
    {
        const auto it = index_.find(key);
        if (it == index_.end()) throw std::logic_error("undeclared setting '" + key + "'");
        return entries_[it->second];
    }

    std::vector<Entry> entries_;
    std::map<std::string, std::size_t> index_;
    std::string configPath_;
};

}  // namespace mssm::tools

#endif  // MSSM_TOOLS_RUN_CONFIG_HPP
