"""The fixed 26-channel feature map: 10 vital signs followed by 16 labs.

Each channel carries its source item IDs and its forward-fill window in
hours. Temperature is a single unified Celsius channel fed by both the
Fahrenheit item (223761, converted) and the Celsius item (223762).
"""

from dataclasses import dataclass

TEMP_F_ITEM = 223761
TEMP_C_ITEM = 223762


@dataclass(frozen=True)
class Channel:
    name: str
    item_ids: tuple[int, ...]
    fill_hours: int
    kind: str  # "vital" or "lab"


VITAL_CHANNELS = (
    Channel("heart_rate", (220045,), 4, "vital"),
    Channel("sbp_arterial", (220050,), 4, "vital"),
    Channel("sbp_noninvasive", (220179,), 4, "vital"),
    Channel("dbp_arterial", (220051,), 4, "vital"),
    Channel("dbp_noninvasive", (220180,), 4, "vital"),
    Channel("map_arterial", (220052,), 4, "vital"),
    Channel("map_noninvasive", (220181,), 4, "vital"),
    Channel("resp_rate", (220210,), 4, "vital"),
    Channel("spo2", (220277,), 4, "vital"),
    Channel("temperature_c", (TEMP_F_ITEM, TEMP_C_ITEM), 4, "vital"),
)

LAB_CHANNELS = (
    Channel("lactate", (50813,), 6, "lab"),
    Channel("creatinine", (50912,), 24, "lab"),
    Channel("bun", (51006,), 24, "lab"),
    Channel("potassium", (50971,), 24, "lab"),
    Channel("sodium", (50983,), 24, "lab"),
    Channel("glucose", (50931,), 24, "lab"),
    Channel("wbc", (51301,), 24, "lab"),
    Channel("hemoglobin", (51222,), 24, "lab"),
    Channel("hematocrit", (51221,), 24, "lab"),
    Channel("platelets", (51265,), 24, "lab"),
    Channel("bilirubin", (50885,), 24, "lab"),
    Channel("albumin", (50862,), 48, "lab"),
    Channel("ph", (50820,), 6, "lab"),
    Channel("pco2", (50818,), 6, "lab"),
    Channel("po2", (50821,), 6, "lab"),
    Channel("bicarbonate", (50882,), 24, "lab"),
)

CHANNELS = VITAL_CHANNELS + LAB_CHANNELS
N_CHANNELS = len(CHANNELS)  # 26
CHANNEL_NAMES = tuple(c.name for c in CHANNELS)
FILL_HOURS = tuple(c.fill_hours for c in CHANNELS)

ITEM_TO_CHANNEL: dict[int, int] = {
    item: idx for idx, ch in enumerate(CHANNELS) for item in ch.item_ids
}

VITAL_ITEM_IDS = frozenset(item for ch in VITAL_CHANNELS for item in ch.item_ids)
LAB_ITEM_IDS = frozenset(item for ch in LAB_CHANNELS for item in ch.item_ids)
MEASUREMENT_ITEM_IDS = VITAL_ITEM_IDS | LAB_ITEM_IDS

VASOPRESSOR_ITEM_IDS = frozenset({221906, 221289, 221662, 221749, 222315})
VENTILATION_ITEM_IDS = frozenset({224385, 225792})


def fahrenheit_to_celsius(value: float) -> float:
    return (value - 32.0) * 5.0 / 9.0
