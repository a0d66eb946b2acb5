import os, sys, time

LOG_FOLDERS = ["logs", "runs"]
MAX_AGE_DAYS = 7
MAX_SIZE_MB = 5
# Only log files; checkpoints and reports are left alone.
SUFFIXES = (".log", ".jsonl")


def cleanup_logs(folders=LOG_FOLDERS):
    now = time.time()
    for folder in folders:
        if not os.path.isdir(folder):
            continue
        for root, _, files in os.walk(folder):
            for name in files:
                if not name.endswith(SUFFIXES) and ".log." not in name:
                    continue
                path = os.path.join(root, name)
                stats = os.stat(path)
                age = now - stats.st_mtime
                size_mb = stats.st_size / (1024 * 1024)
                if age > MAX_AGE_DAYS * 86400 or size_mb > MAX_SIZE_MB:
                    print(f"Deleting: {path}")
                    os.remove(path)


if __name__ == "__main__":
    cleanup_logs(sys.argv[1:] or LOG_FOLDERS)
