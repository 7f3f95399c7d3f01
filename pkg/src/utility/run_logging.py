import json

from pathlib import Path


class RunLogging:
    def __init__(self):
        """Class for collecting information about a run: stage timings, counters and provenance.
        """
        self.run_log = {"command": None,                 # subcommand that was executed
                        "provenance": None,              # config hash, input hashes, version
                        "time tracking": {},             # wall time per pipeline stage [s]
                        "counters": {},                  # tiles, nuclei, candidates, ...
                        "mitosis candidates": {},        # kept / discarded with reason
                        "outputs": {}}                   # written files

    def add_entry(self,
                  sub_dict: str,
                  key,
                  value):
        """Adds an entry to the specified sub-dictionary.
        :param sub_dict : sub-dictionary of the run log dictionary
        :param key      : key of the new entry
        :param value    : value of the new entry
        """
        self.run_log[sub_dict].update({key: value})

    def increment(self,
                  key: str,
                  value: int = 1):
        """Increments a counter.
        :param key   : counter name
        :param value : increment
        """
        self.run_log["counters"][key] = self.run_log["counters"].get(key, 0) + value

    def set_value(self,
                  key: str,
                  value: object):
        """Updates the specific value of the dictionary.
        :param key   : key of the new entry
        :param value : value of the new entry
        """
        self.run_log[key] = value

    def save_results(self,
                     folder) -> Path:
        """Saves the stored information into a run_log.json file.
        :param folder: folder to save the results
        :return
            path of the written file
        """
        path = Path(folder) / "run_log.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as f:
            json.dump(self.run_log, f, indent=2, sort_keys=True, default=str)
        return path
