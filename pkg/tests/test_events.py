import numpy as np
import pytest

from stim.context import HolidayCalendar, Material
from stim.events import BehaviorEvent, BehaviorSequence, RequestContext
from stim.gsu import pad_sequence

from conftest import DAY, HOUR, T0, make_sequence


def test_event_derives_time_fields():
    e = BehaviorEvent.at(1, 2, 3, T0 + 5 * DAY + 20 * HOUR, "wkbcde")
    assert (e.hour_of_day, e.weekday) == (20, 5)
    g = e.groups()
    assert (g.hour_group, g.week_group, g.geo_group) == (2, 1, 2)


def test_sequence_round_trip_through_events():
    seq = make_sequence([(1, 1, 1, float(T0), "w0bcde"), (2, 3, 4, float(T0 + HOUR), "u4pruy")])
    assert len(seq) == 2
    back = BehaviorSequence.from_events(list(seq))
    assert back.item_ids.tolist() == [1, 2]
    assert back[1].geohash6 == "u4pruy"
    assert back[0].price is None


def test_sequence_rejects_ragged_columns():
    with pytest.raises(ValueError, match="column"):
        BehaviorSequence([1, 2], [1], [1, 2], [0.0, 1.0], [0, 0], [0, 0], ["a", "b"])


def test_material_groups_pad_minus_one():
    seq = make_sequence([(1, 1, 1, float(T0 + 8 * HOUR), "w0bcde"), (2, 1, 1, float(T0 + 5 * DAY + 12 * HOUR), "u4pruy")])
    cs = pad_sequence(seq, 4)
    assert cs.material_groups(Material.HOUR).tolist() == [0, 1, -1, -1]
    assert cs.material_groups(Material.WEEK).tolist() == [0, 1, -1, -1]
    assert cs.material_groups(Material.GEO).tolist() == [1, 0, -1, -1]


def test_request_holiday_from_calendar():
    cal = HolidayCalendar.from_dates(["2024-03-05"])
    assert RequestContext.at(T0 + DAY + 3600, "w0bcde", calendar=cal).is_holiday == 1
    assert RequestContext.at(T0 + 3600, "w0bcde", calendar=cal).is_holiday == 0
