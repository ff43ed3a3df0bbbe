# Safety Agent Tests
