#ifndef MSSM_HAR_DATA_HPP
#define MSSM_HAR_DATA_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "../numkit.hpp"

namespace mssm::har {

/// Malformed or unreadable input data.
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& msg, std::size_t line = 0)
        : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + msg : msg), line_(line)
    {
    }
    [[nodiscard]] std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

inline constexpr std::size_t kImuChannels = 6;

struct WindowConfig {
    std::size_t length{512};
    double overlap{0.5};
    std::size_t channels{kImuChannels};

    void validate() const
    {
        require(length >= 2, "WindowConfig: L must be >= 2");
        require(overlap >= 0.0 && overlap < 1.0, "WindowConfig: overlap must lie in [0, 1)");
        require(channels >= 1, "WindowConfig: channels must be >= 1");
    }
    [[nodiscard]] std::size_t stride() const
    {
        const auto s = static_cast<std::size_t>(std::llround(static_cast<double>(length) * (1.0 - overlap)));
        return s == 0 ? 1 : s;
    }
};

struct Window {
    std::size_t offset{0};
    RealSeq x;
};

inline std::vector<Window> window_stream(const RealSeq& stream, const WindowConfig& wc)
{
    wc.validate();
    require(stream.cols() == wc.channels, "window_stream: stream width != channels");
    if (stream.rows() < wc.length) {
        throw ContractError("window_stream: stream too short (" + std::to_string(stream.rows()) + " < L=" +
                            std::to_string(wc.length) + ")");
    }
    const std::size_t stride = wc.stride();
    const std::size_t count = (stream.rows() - wc.length) / stride + 1;
    std::vector<Window> out;
    out.reserve(count);
    for (std::size_t k = 0; k < count; ++k) {
        const std::size_t off = k * stride;
        RealSeq w(wc.length, wc.channels);
        std::copy_n(stream.row(off), wc.length * wc.channels, w.data().begin());
        out.push_back({off, std::move(w)});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Normalization.

inline constexpr double kStdFloor = 1e-8;

struct ChannelStats {
    std::vector<double> mean;
    std::vector<double> std;
};

/// Population mean/std per channel over every time step of every sequence.
inline ChannelStats channel_stats(const std::vector<RealSeq>& xs)
{
    require(!xs.empty(), "channel_stats: no sequences");
    const std::size_t c = xs.front().cols();
    ChannelStats s{std::vector<double>(c, 0.0), std::vector<double>(c, 0.0)};
    double count = 0.0;
    for (const auto& x : xs) {
        require(x.cols() == c, "channel_stats: inconsistent channel count");
        for (std::size_t t = 0; t < x.rows(); ++t) {
            for (std::size_t j = 0; j < c; ++j) s.mean[j] += x(t, j);
        }
        count += static_cast<double>(x.rows());
    }
    for (double& m : s.mean) m /= count;
    for (const auto& x : xs) {
        for (std::size_t t = 0; t < x.rows(); ++t) {
            for (std::size_t j = 0; j < c; ++j) {
                const double d = x(t, j) - s.mean[j];
                s.std[j] += d * d;
            }
        }
    }
    for (double& v : s.std) v = std::sqrt(v / count);
    return s;
}

inline RealSeq zscore(const RealSeq& x, const ChannelStats& st)
{
    require(st.mean.size() == x.cols() && st.std.size() == x.cols(), "zscore: stats width mismatch");
    RealSeq out(x.rows(), x.cols());
    for (std::size_t t = 0; t < x.rows(); ++t) {
        for (std::size_t j = 0; j < x.cols(); ++j) out(t, j) = (x(t, j) - st.mean[j]) / std::max(st.std[j], kStdFloor);
    }
    return out;
}

inline std::vector<RealSeq> zscore(const std::vector<RealSeq>& xs, const ChannelStats& st)
{
    std::vector<RealSeq> out;
    out.reserve(xs.size());
    for (const auto& x : xs) out.push_back(zscore(x, st));
    return out;
}

// ---------------------------------------------------------------------------
// Labelled sequence sets.

struct Dataset {
    std::vector<RealSeq> x;
    std::vector<int> y;
    std::size_t numClasses{0};

    [[nodiscard]] std::size_t size() const { return x.size(); }
};

struct DelayedRecallSpec {
    std::size_t length{128};
    std::size_t delay{64};
    std::size_t classes{4};
    std::size_t count{256};
    double noise{1.0};
    double amplitude{2.0};
};

/// Each class owns a random pattern over the 6 channels. Sequence samples are
/// N(0, noise) except at t = L-1-delay, where the class pattern is written.
/// Labels cycle through the classes before shuffling, so counts differ by at most one.
inline Dataset make_delayed_recall(Rng& rng, const DelayedRecallSpec& s)
{
    require(s.length >= 1 && s.delay < s.length, "make_delayed_recall: need delay < L");
    require(s.classes >= 2, "make_delayed_recall: need at least 2 classes");
    require(s.noise >= 0.0, "make_delayed_recall: noise must be >= 0");
    require(s.classes <= (std::size_t{1} << kImuChannels), "make_delayed_recall: at most 64 classes");
    std::vector<std::vector<double>> patterns;
    while (patterns.size() < s.classes) {
        std::vector<double> p(kImuChannels);
        for (double& v : p) v = rng.uniform() < 0.5 ? -s.amplitude : s.amplitude;
        if (std::find(patterns.begin(), patterns.end(), p) == patterns.end()) patterns.push_back(std::move(p));
    }
    std::vector<int> labels(s.count);
    for (std::size_t i = 0; i < s.count; ++i) labels[i] = static_cast<int>(i % s.classes);
    rng.shuffle(labels);

    Dataset ds;
    ds.numClasses = s.classes;
    ds.y = labels;
    const std::size_t at = s.length - 1 - s.delay;
    for (std::size_t i = 0; i < s.count; ++i) {
        RealSeq x(s.length, kImuChannels);
        for (double& v : x.data()) v = s.noise * rng.normal();
        const auto& p = patterns[static_cast<std::size_t>(labels[i])];
        for (std::size_t c = 0; c < kImuChannels; ++c) x(at, c) = p[c];
        ds.x.push_back(std::move(x));
    }
    return ds;
}

// ---------------------------------------------------------------------------
// CSV formats.

struct Recording {
    std::string id;
    std::vector<double> t;
    RealSeq samples;  // T x 6
    std::vector<int> labels;
};

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line)
{
    std::vector<std::string> out;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline double parse_number(const std::string& cell, std::size_t line)
{
    const std::string c = trim(cell);
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(c, &used);
    } catch (const std::exception&) {
        throw DataError("not a number: '" + c + "'", line);
    }
    if (used != c.size() || !std::isfinite(v)) throw DataError("not a finite number: '" + c + "'", line);
    return v;
}

}  // namespace detail

/// Reads `t,ax,ay,az,gx,gy,gz,label_id` rows grouped by `# recording <id>` lines.
inline std::vector<Recording> read_dataset_csv(std::istream& in)
{
    std::vector<Recording> recs;
    std::vector<std::vector<double>> rows;
    std::string line;
    std::size_t lineNo = 0;
    bool sawHeader = false;
    auto flush = [&]() {
        if (recs.empty()) return;
        Recording& r = recs.back();
        r.samples = RealSeq(rows.size(), kImuChannels);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            for (std::size_t c = 0; c < kImuChannels; ++c) r.samples(i, c) = rows[i][c];
        }
        rows.clear();
    };
    while (std::getline(in, line)) {
        ++lineNo;
        const std::string s = detail::trim(line);
        if (s.empty()) continue;
        if (s[0] == '#') {
            const std::string body = detail::trim(s.substr(1));
            if (body.rfind("recording", 0) == 0) {
                flush();
                recs.push_back({detail::trim(body.substr(9)), {}, {}, {}});
            }
            continue;
        }
        if (!sawHeader && s.rfind("t,", 0) == 0) {
            if (s != "t,ax,ay,az,gx,gy,gz,label_id") throw DataError("unexpected header '" + s + "'", lineNo);
            sawHeader = true;
            continue;
        }
        const auto cells = detail::split_csv(s);
        if (cells.size() != 8) {
            throw DataError("expected 8 columns, got " + std::to_string(cells.size()), lineNo);
        }
        if (recs.empty()) throw DataError("data row before any '# recording <id>' line", lineNo);
        Recording& r = recs.back();
        r.t.push_back(detail::parse_number(cells[0], lineNo));
        std::vector<double> v(kImuChannels);
        for (std::size_t c = 0; c < kImuChannels; ++c) v[c] = detail::parse_number(cells[c + 1], lineNo);
        rows.push_back(std::move(v));
        const double lab = detail::parse_number(cells[7], lineNo);
        if (lab < 0.0 || lab != std::floor(lab)) throw DataError("label_id must be a non-negative integer", lineNo);
        r.labels.push_back(static_cast<int>(lab));
    }
    flush();
    if (recs.empty()) throw DataError("no recordings found");
    return recs;
}

inline std::vector<Recording> read_dataset_csv(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw DataError("cannot open dataset '" + path + "'");
    return read_dataset_csv(in);
}

/// Windows every recording; a window's label is its majority label (ties -> smallest id).
/// Recordings shorter than L are skipped.
inline Dataset windows_from_recordings(const std::vector<Recording>& recs, const WindowConfig& wc,
                                       std::size_t numClasses)
{
    Dataset ds;
    ds.numClasses = numClasses;
    for (const auto& r : recs) {
        if (r.samples.rows() < wc.length) continue;
        for (auto& w : window_stream(r.samples, wc)) {
            std::map<int, std::size_t> votes;
            for (std::size_t t = 0; t < wc.length; ++t) ++votes[r.labels[w.offset + t]];
            int best = votes.begin()->first;
            for (const auto& [lab, n] : votes) {
                if (n > votes[best]) best = lab;
            }
            if (static_cast<std::size_t>(best) >= numClasses) {
                throw DataError("label " + std::to_string(best) + " >= classes=" + std::to_string(numClasses));
            }
            ds.x.push_back(std::move(w.x));
            ds.y.push_back(best);
        }
    }
    return ds;
}

inline void write_dataset_csv(std::ostream& out, const Dataset& ds)
{
    out.precision(17);
    out << "t,ax,ay,az,gx,gy,gz,label_id\n";
    for (std::size_t i = 0; i < ds.size(); ++i) {
        out << "# recording " << i << "\n";
        for (std::size_t t = 0; t < ds.x[i].rows(); ++t) {
            out << t;
            for (std::size_t c = 0; c < kImuChannels; ++c) out << ',' << ds.x[i](t, c);
            out << ',' << ds.y[i] << "\n";
        }
    }
}

inline void write_stats_csv(std::ostream& out, const ChannelStats& st)
{
    out.precision(17);
    out << "channel,mean,std\n";
    for (std::size_t c = 0; c < st.mean.size(); ++c) out << c << ',' << st.mean[c] << ',' << st.std[c] << "\n";
}

inline ChannelStats read_stats_csv(std::istream& in)
{
    ChannelStats st;
    std::string line;
    std::size_t lineNo = 0;
    while (std::getline(in, line)) {
        ++lineNo;
        const std::string s = detail::trim(line);
        if (s.empty() || s == "channel,mean,std") continue;
        const auto cells = detail::split_csv(s);
        if (cells.size() != 3) throw DataError("expected channel,mean,std", lineNo);
        const double ch = detail::parse_number(cells[0], lineNo);
        if (ch != static_cast<double>(st.mean.size())) throw DataError("channels must be listed in order", lineNo);
        st.mean.push_back(detail::parse_number(cells[1], lineNo));
        st.std.push_back(detail::parse_number(cells[2], lineNo));
    }
    return st;
}

}  // namespace mssm::har

#endif  // MSSM_HAR_DATA_HPP
