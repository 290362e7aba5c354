"""Software air-quality monitoring station.

Virtual PMS5003/DHT11/MQ135 sensors feed byte-level parsers and a
calibration chain; readings are scored with the AQI max rule and fanned out
to a CSV log, a line-protocol telemetry stream and a TCP query port.
"""

__version__ = "0.1.0"
