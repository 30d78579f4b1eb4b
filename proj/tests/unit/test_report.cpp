#include "helpers.hpp"

#include "twinforge/error.hpp"
#include "twinforge/report.hpp"

#include <doctest.h>

#include <fstream>
#include <sstream>

using namespace twinforge;
using testing::TempDir;

TEST_SUITE("report")
{
    TEST_CASE("csv table round-trips with its digest line")
    {
        TempDir dir("csv");
        CsvTable t{"abc123", {"id", "rmse"}, {{"AP0001", "1.5"}, {"MS0002", ""}}};
        write_csv(dir / "t.csv", t);

        std::ifstream in(dir / "t.csv");
        std::string first;
        std::getline(in, first);
        CHECK(first == "# config_digest: abc123");

        const auto back = read_csv(dir / "t.csv");
        CHECK(back.digest == t.digest);
        CHECK(back.header == t.header);
        CHECK(back.rows == t.rows);
        CHECK(t.str() == "# config_digest: abc123\nid,rmse\nAP0001,1.5\nMS0002,\n");
    }

    TEST_CASE("cells with separators are refused")
    {
        CsvTable t{"d", {"a"}, {{"x,y"}}};
        CHECK_THROWS_AS(t.str(), Error);
    }

    TEST_CASE("malformed csv files")
    {
        TempDir dir("csv");
        { std::ofstream(dir / "nodigest.csv") << "id,rmse\nA,1\n"; }
        CHECK_THROWS_AS(read_csv(dir / "nodigest.csv"), Error);
        { std::ofstream(dir / "ragged.csv") << "# config_digest: d\nid,rmse\nA\n"; }
        try {
            read_csv(dir / "ragged.csv");
            FAIL("expected PARSE_FAILURE");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::ParseFailure);
            CHECK(std::string(e.what()).find(":3") != std::string::npos);
        }
        try {
            read_csv(dir / "missing.csv");
            FAIL("expected IO_FAILURE");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::IoFailure);
        }
    }

    TEST_CASE("svg output is deterministic and well formed")
    {
        ScatterPlot plot;
        plot.title = "rmse vs std_TB <test>";
        plot.x_label = "std_TB [K]";
        plot.y_label = "rmse [K]";
        plot.points = {{1.0, 2.0, "AP0001", "TOO_SIMILAR"},
                       {2.0, 2.5, "AP0002", "HIGH_BASE_ERROR"},
                       {3.0, 1.0, "MS0003", ""}};
        plot.fit = ScatterFit{{1.0, 3.0}, {2.0, 1.5}, {1.0, 0.5}, {3.0, 2.5}};
        const auto a = render_svg(plot);
        CHECK(a == render_svg(plot));
        CHECK(a.rfind("<svg", 0) == 0);
        CHECK(a.find("</svg>") != std::string::npos);
        CHECK(a.find("&lt;test&gt;") != std::string::npos);
        CHECK(a.find("HIGH_BASE_ERROR") != std::string::npos);
        CHECK(a.find("AP0002") != std::string::npos);

        plot.points[0].y = 2.1;
        CHECK(render_svg(plot) != a);
    }

    TEST_CASE("svg of a single point does not divide by zero")
    {
        ScatterPlot plot;
        plot.points = {{5.0, 5.0, "only", ""}};
        const auto s = render_svg(plot);
        CHECK(s.find("nan") == std::string::npos);
        CHECK(s.find("inf") == std::string::npos);
    }
}
