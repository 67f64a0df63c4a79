from hypothesis import settings

# fixed example streams keep the property suites reproducible run to run
settings.register_profile("repro", derandomize=True, print_blob=True)
settings.load_profile("repro")
