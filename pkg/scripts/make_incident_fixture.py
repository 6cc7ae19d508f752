"""Regenerate ``src/killfie/data/incidents.csv``.

Only aggregate figures about selfie casualties are public, so the rows written
here are synthesized to satisfy those marginals exactly:

* deaths by country (76 India, 9 Pakistan, ... 1 Hong Kong; 127 total)
* 24 group incidents sized {2: 16, 3: 5, 5: 1, 7: 2}
* deaths by reason: Height 29, Train 11, HeightAndWater 27 over 14 incidents,
  weapons 3 in the USA and 2 in Russia
* India: 44 of 85 incidents, 66 of 76 deaths water related
* deaths per year: 15 (2014, from March), 39 (2015), 73 (2016, to September)
* victims: 77 male / 25 female / 25 unknown; age bands 41 / 45 / 24 / 17

Countries first appear in the same order as the published country table so
that "first incident date" reproduces its row order.

Run: python scripts/make_incident_fixture.py
"""
from __future__ import annotations

import csv
import datetime as dt
from pathlib import Path

OUT = Path(__file__).resolve().parents[1] / "src" / "killfie" / "data" / "incidents.csv"

COUNTRY_ORDER = [
    "India", "Pakistan", "USA", "Russia", "Philippines", "China", "Spain",
    "Indonesia", "Portugal", "Peru", "Turkey", "Romania", "Australia", "Mexico",
    "South Africa", "Italy", "Serbia", "Chile", "Nepal", "Hong Kong",
]

# (country, reason, deaths) -- one tuple per incident
NON_INDIA = [
    ("Pakistan", "Height", 1), ("Pakistan", "Train", 2), ("Pakistan", "Water", 2),
    ("Pakistan", "Height", 1), ("Pakistan", "Height", 1), ("Pakistan", "Train", 1),
    ("Pakistan", "Vehicle", 1),
    ("USA", "Weapon", 1), ("USA", "Height", 2), ("USA", "Weapon", 1),
    ("USA", "Weapon", 1), ("USA", "Height", 1), ("USA", "Height", 1), ("USA", "Animal", 1),
    ("Russia", "Weapon", 1), ("Russia", "Height", 2), ("Russia", "Weapon", 1),
    ("Russia", "Height", 1), ("Russia", "Electricity", 1),
    ("Philippines", "Height", 1), ("Philippines", "Water", 2), ("Philippines", "Vehicle", 1),
    ("China", "Train", 1), ("China", "Height", 2), ("China", "Height", 1),
    ("Spain", "Height", 1), ("Spain", "Train", 2),
    ("Indonesia", "Height", 2),
    ("Portugal", "Height", 2),
    ("Peru", "Water", 2),
    ("Turkey", "Height", 1), ("Turkey", "Train", 1),
    ("Romania", "Electricity", 1),
    ("Australia", "Water", 1),
    ("Mexico", "Height", 1),
    ("South Africa", "Animal", 1),
    ("Italy", "Height", 1),
    ("Serbia", "Vehicle", 1),
    ("Chile", "Height", 1),
    ("Nepal", "Height", 1),
    ("Hong Kong", "Vehicle", 1),
]

INDIA = (
    [("India", "Water", 1)]  # earliest incident overall
    + [("India", "HeightAndWater", n) for n in (5, 3, 3, 3, 2, 2, 2)]
    + [("India", "HeightAndWater", 1)] * 7
    + [("India", "Water", n) for n in (7, 7, 3, 3, 2, 2, 2)]
    + [("India", "Water", 1)] * 12
    + [("India", "Height", 1)] * 5
    + [("India", "Train", 1)] * 4
    + [("India", "Electricity", 1)]
)

GENDERS = ["M"] * 77 + ["F"] * 25 + ["Unknown"] * 25
AGES = ["Under20"] * 41 + ["A20to24"] * 45 + ["A25to29"] * 24 + ["A30plus"] * 17

YEAR_TOTALS = [(2014, 15), (2015, 39), (2016, 73)]
YEAR_SPANS = {
    2014: (dt.date(2014, 3, 1), dt.date(2014, 12, 20)),
    2015: (dt.date(2015, 1, 5), dt.date(2015, 12, 20)),
    2016: (dt.date(2016, 1, 5), dt.date(2016, 9, 25)),
}


def ordered_incidents() -> list[tuple[str, str, int]]:
    """First incident of every country in table order, then the remainder."""
    pool = INDIA + NON_INDIA
    first: list[tuple[str, str, int]] = []
    rest = list(pool)
    for country in COUNTRY_ORDER:
        idx = next(i for i, inc in enumerate(rest) if inc[0] == country)
        first.append(rest.pop(idx))
    return first + rest


def assign_years(incidents):
    years = []
    remaining = list(range(len(incidents)))
    for year, total in YEAR_TOTALS[:-1]:
        acc = 0
        taken = []
        for i in remaining:
            if acc + incidents[i][2] <= total:
                taken.append(i)
                acc += incidents[i][2]
            if acc == total:
                break
        assert acc == total, (year, acc)
        years.append((year, taken))
        remaining = [i for i in remaining if i not in taken]
    years.append((YEAR_TOTALS[-1][0], remaining))
    assert sum(incidents[i][2] for i in remaining) == YEAR_TOTALS[-1][1]
    return years


def main() -> None:
    incidents = ordered_incidents()
    assert sum(d for _, _, d in incidents) == 127
    dates: dict[int, dt.date] = {}
    for year, idxs in assign_years(incidents):
        start, end = YEAR_SPANS[year]
        span = (end - start).days
        for j, i in enumerate(sorted(idxs)):
            dates[i] = start + dt.timedelta(days=round(j * span / max(len(idxs) - 1, 1)))

    order = sorted(range(len(incidents)), key=lambda i: (dates[i], i))
    genders = iter(GENDERS)
    # spread unknown ages so bands do not cluster by date
    ages = iter(AGES[0::2] + AGES[1::2])
    rows = []
    for n, i in enumerate(order, start=1):
        country, reason, deaths = incidents[i]
        rows.append({
            "incident_id": f"INC{n:03d}",
            "date": dates[i].isoformat(),
            "country": country,
            "reason": reason,
            "deaths": deaths,
            "victim_genders": "|".join(next(genders) for _ in range(deaths)),
            "victim_age_bands": "|".join(next(ages) for _ in range(deaths)),
            "synthetic": "true",
        })
    OUT.parent.mkdir(parents=True, exist_ok=True)
    with OUT.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    print(f"wrote {len(rows)} incidents to {OUT}")


if __name__ == "__main__":
    main()
