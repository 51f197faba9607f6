#pragma once

// Minimal static SVG output for curves and scatter plots.

#include "stardr/text.hpp"

#include <algorithm>

namespace stardr::svg {

struct Series {
    std::string label;
    std::string color;
    std::vector<double> x;
    std::vector<double> y;
    std::vector<double> band; // optional +/- half-width around y
};

struct Point {
    double x = 0.0;
    double y = 0.0;
};

struct ScatterGroup {
    std::string label;
    std::string color;
    std::vector<Point> points;
};

inline const char* palette(std::size_t i) {
    static constexpr const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"};
    return colors[i % 6];
}

class Canvas {
public:
    Canvas(double xmin, double xmax, double ymin, double ymax, std::string title)
        : xmin_(xmin), xmax_(xmax == xmin ? xmin + 1 : xmax), ymin_(ymin), ymax_(ymax == ymin ? ymin + 1 : ymax) {
        body_ += "<text x=\"320\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" + title + "</text>\n";
        body_ += "<rect x=\"60\" y=\"40\" width=\"540\" height=\"380\" fill=\"none\" stroke=\"#444\"/>\n";
        for (int i = 0; i <= 4; ++i) {
            const double fx = xmin_ + (xmax_ - xmin_) * i / 4.0;
            const double fy = ymin_ + (ymax_ - ymin_) * i / 4.0;
            body_ += "<text x=\"" + fmt(px(fx)) + "\" y=\"438\" text-anchor=\"middle\" font-size=\"11\">" +
                     text::format_fixed(fx, 2) + "</text>\n";
            body_ += "<text x=\"54\" y=\"" + fmt(py(fy) + 4) + "\" text-anchor=\"end\" font-size=\"11\">" +
                     text::format_fixed(fy, 2) + "</text>\n";
        }
    }

    void polyline(const std::vector<double>& x, const std::vector<double>& y, const std::string& color) {
        std::string pts;
        for (std::size_t i = 0; i < x.size(); ++i) pts += fmt(px(x[i])) + "," + fmt(py(y[i])) + " ";
        body_ += "<polyline fill=\"none\" stroke=\"" + color + "\" stroke-width=\"2\" points=\"" + pts + "\"/>\n";
    }

    void band(const std::vector<double>& x, const std::vector<double>& lo, const std::vector<double>& hi,
              const std::string& color) {
        std::string pts;
        for (std::size_t i = 0; i < x.size(); ++i) pts += fmt(px(x[i])) + "," + fmt(py(hi[i])) + " ";
        for (std::size_t i = x.size(); i-- > 0;) pts += fmt(px(x[i])) + "," + fmt(py(lo[i])) + " ";
        body_ += "<polygon fill=\"" + color + "\" fill-opacity=\"0.2\" stroke=\"none\" points=\"" + pts + "\"/>\n";
    }

    void dot(double x, double y, const std::string& color, double r = 2.5) {
        body_ += "<circle cx=\"" + fmt(px(x)) + "\" cy=\"" + fmt(py(y)) + "\" r=\"" + fmt(r) + "\" fill=\"" + color +
                 "\" fill-opacity=\"0.6\"/>\n";
    }

    void line(double x0, double y0, double x1, double y1, const std::string& label) {
        body_ += "<line x1=\"" + fmt(px(x0)) + "\" y1=\"" + fmt(py(y0)) + "\" x2=\"" + fmt(px(x1)) + "\" y2=\"" +
                 fmt(py(y1)) + "\" stroke=\"#000\" stroke-dasharray=\"4 3\"/>\n";
        body_ += "<text x=\"" + fmt((px(x0) + px(x1)) / 2) + "\" y=\"" + fmt((py(y0) + py(y1)) / 2 - 4) +
                 "\" font-size=\"11\">" + label + "</text>\n";
    }

    void legend(std::size_t i, const std::string& label, const std::string& color) {
        const double y = 56 + 16.0 * static_cast<double>(i);
        body_ += "<rect x=\"470\" y=\"" + fmt(y - 9) + "\" width=\"10\" height=\"10\" fill=\"" + color + "\"/>\n";
        body_ += "<text x=\"486\" y=\"" + fmt(y) + "\" font-size=\"12\">" + label + "</text>\n";
    }

    std::string str() const {
        return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"460\" viewBox=\"0 0 640 460\">\n"
               "<rect width=\"640\" height=\"460\" fill=\"#fff\"/>\n" +
               body_ + "</svg>\n";
    }

private:
    static std::string fmt(double v) { return text::format_fixed(v, 2); }
    double px(double x) const { return 60.0 + 540.0 * (x - xmin_) / (xmax_ - xmin_); }
    double py(double y) const { return 420.0 - 380.0 * (y - ymin_) / (ymax_ - ymin_); }

    double xmin_, xmax_, ymin_, ymax_;
    std::string body_;
};

inline std::string line_chart(const std::string& title, const std::vector<Series>& series, double ymin = 0.0,
                              double ymax = 1.0) {
    double xmin = 0.0, xmax = 1.0;
    bool first = true;
    for (const auto& s : series) {
        for (double v : s.x) {
            xmin = first ? v : std::min(xmin, v);
            xmax = first ? v : std::max(xmax, v);
            first = false;
        }
    }
    Canvas c(xmin, xmax, ymin, ymax, title);
    for (std::size_t i = 0; i < series.size(); ++i) {
        const auto& s = series[i];
        if (!s.band.empty()) {
            std::vector<double> lo, hi;
            for (std::size_t j = 0; j < s.y.size(); ++j) {
                lo.push_back(std::max(ymin, s.y[j] - s.band[j]));
                hi.push_back(std::min(ymax, s.y[j] + s.band[j]));
            }
            c.band(s.x, lo, hi, s.color);
        }
        c.polyline(s.x, s.y, s.color);
        c.legend(i, s.label, s.color);
    }
    return c.str();
}

struct Annotation {
    Point from;
    Point to;
    std::string label;
};

inline std::string scatter(const std::string& title, const std::vector<ScatterGroup>& groups,
                           const std::vector<Annotation>& lines = {}) {
    double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    bool first = true;
    for (const auto& g : groups) {
        for (const auto& p : g.points) {
            if (first) {
                xmin = xmax = p.x;
                ymin = ymax = p.y;
                first = false;
            }
            xmin = std::min(xmin, p.x);
            xmax = std::max(xmax, p.x);
            ymin = std::min(ymin, p.y);
            ymax = std::max(ymax, p.y);
        }
    }
    Canvas c(xmin, xmax, ymin, ymax, title);
    for (std::size_t i = 0; i < groups.size(); ++i) {
        for (const auto& p : groups[i].points) c.dot(p.x, p.y, groups[i].color);
        c.legend(i, groups[i].label, groups[i].color);
    }
    for (const auto& a : lines) c.line(a.from.x, a.from.y, a.to.x, a.to.y, a.label);
    return c.str();
}

} // namespace stardr::svg
